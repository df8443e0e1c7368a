#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "calli/image.hpp"

namespace calli {

struct Rect {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;

    long long area() const { return static_cast<long long>(w) * h; }
    int right() const { return x + w; }    // exclusive
    int bottom() const { return y + h; }   // exclusive
    bool operator==(const Rect&) const = default;
};

long long intersection_area(const Rect& a, const Rect& b);
Rect bounding_union(const Rect& a, const Rect& b);
double iou(const Rect& a, const Rect& b);

struct RejectedRect {
    Rect rect;
    std::string reason;
};

struct SegmentationResult {
    std::string page_id;
    std::vector<Rect> rois;
    std::vector<Image> crops;  // resampled, unlabeled
    std::vector<RejectedRect> rejected;
};

struct BinarizeMode {
    bool automatic = true;
    int threshold = 128;     // byte threshold for the fixed mode
    bool invert = false;     // set for light-ink-on-dark pages

    static BinarizeMode fixed(int t) { return {false, t, false}; }
    static BinarizeMode otsu() { return {true, 0, false}; }
};

// Dark pixels become ink (1) unless invert is set. Automatic mode picks the
// threshold by maximizing between-class variance on the byte histogram.
BinaryImage binarize(const Image& page, const BinarizeMode& mode);

// Minimal bounding rectangle per 8-connected ink component, ordered by
// (y, x, w, h). Blank pages give an empty list.
std::vector<Rect> extract_initial_rois(const BinaryImage& binary);

struct MergeOptions {
    // A pair is considered overlapping when the intersection exceeds this
    // fraction of the smaller rectangle's area. 0 means any positive overlap.
    double min_overlap_ratio = 0.0;
};

// Greedy merge of overlapping rectangles by bounding-box union, largest
// overlap first, admitting a merge only while the union's area stays within
// the largest rectangle of the *original* input. Output sorted by (y, x).
std::vector<Rect> merge_rois(const std::vector<Rect>& rects, const MergeOptions& opts = {});

// Keeps rects with min_area <= w*h <= max_area, preserving order.
std::vector<Rect> filter_by_size(const std::vector<Rect>& rects, long long min_area,
                                 long long max_area);

// Crops every rect, resamples to resolution x resolution, writes PNGs plus a
// manifest stub (label fields left blank for manual labeling) into out_dir.
SegmentationResult crop_and_export(const Image& page, const std::vector<Rect>& rects,
                                   const std::filesystem::path& out_dir, int resolution,
                                   bool invert_ink = false,
                                   const std::string& page_id = "page");

struct SegmentOptions {
    BinarizeMode binarize = BinarizeMode::otsu();
    MergeOptions merge;
    long long min_area = 0;
    long long max_area = -1;  // -1 = unbounded
    int resolution = 64;
    bool invert_ink = false;  // invert crops so exported ink is bright
};

// Full pipeline: binarize -> extract -> merge -> size filter -> export.
SegmentationResult segment_page(const Image& page, const SegmentOptions& opts,
                                const std::filesystem::path& out_dir,
                                const std::string& page_id = "page");

}  // namespace calli
