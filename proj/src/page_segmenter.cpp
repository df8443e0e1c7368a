#include "calli/page_segmenter.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "calli/common.hpp"

namespace calli {

long long intersection_area(const Rect& a, const Rect& b) {
    const int x0 = std::max(a.x, b.x);
    const int y0 = std::max(a.y, b.y);
    const int x1 = std::min(a.right(), b.right());
    const int y1 = std::min(a.bottom(), b.bottom());
    if (x1 <= x0 || y1 <= y0) return 0;
    return static_cast<long long>(x1 - x0) * (y1 - y0);
}

Rect bounding_union(const Rect& a, const Rect& b) {
    const int x0 = std::min(a.x, b.x);
    const int y0 = std::min(a.y, b.y);
    const int x1 = std::max(a.right(), b.right());
    const int y1 = std::max(a.bottom(), b.bottom());
    return {x0, y0, x1 - x0, y1 - y0};
}

double iou(const Rect& a, const Rect& b) {
    const long long inter = intersection_area(a, b);
    const long long uni = a.area() + b.area() - inter;
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

namespace {

int otsu_threshold(const std::array<std::size_t, 256>& hist, std::size_t total) {
    // maximize between-class variance; returns the last bin of the low class
    double sum = 0;
    for (int i = 0; i < 256; ++i) sum += static_cast<double>(i) * hist[i];
    double sum_low = 0;
    std::size_t n_low = 0;
    double best = -1.0;
    int best_t = 0;
    for (int t = 0; t < 256; ++t) {
        n_low += hist[t];
        if (n_low == 0) continue;
        const std::size_t n_high = total - n_low;
        if (n_high == 0) break;
        sum_low += static_cast<double>(t) * hist[t];
        const double mean_low = sum_low / n_low;
        const double mean_high = (sum - sum_low) / n_high;
        const double var = static_cast<double>(n_low) * n_high * (mean_low - mean_high) *
                           (mean_low - mean_high);
        if (var > best) {
            best = var;
            best_t = t;
        }
    }
    return best_t;
}

}  // namespace

BinaryImage binarize(const Image& page, const BinarizeMode& mode) {
    if (page.empty()) throw ValueError("cannot binarize an empty image");

    int threshold = mode.threshold;
    if (mode.automatic) {
        std::array<std::size_t, 256> hist{};
        for (double v : page.px) {
            const int b = std::clamp(static_cast<int>(std::lround(v * 255.0)), 0, 255);
            hist[static_cast<std::size_t>(b)] += 1;
        }
        // Otsu returns the top of the low class; ink is strictly below the cut
        threshold = otsu_threshold(hist, page.size()) + 1;
    }
    if (threshold < 0 || threshold > 256)
        throw ValueError("binarize threshold out of range: " + std::to_string(threshold));

    BinaryImage out(page.width, page.height);
    const double cut = threshold / 255.0;
    for (std::size_t i = 0; i < page.px.size(); ++i) {
        const bool dark = page.px[i] < cut;
        out.px[i] = (dark != mode.invert) ? 1 : 0;
    }
    return out;
}

std::vector<Rect> extract_initial_rois(const BinaryImage& binary) {
    if (binary.empty()) throw ValueError("cannot extract ROIs from an empty image");
    const int w = binary.width, h = binary.height;
    std::vector<std::int32_t> label(static_cast<std::size_t>(w) * h, -1);
    std::vector<Rect> rects;
    std::vector<std::int64_t> stack;

    for (int sy = 0; sy < h; ++sy) {
        for (int sx = 0; sx < w; ++sx) {
            const std::size_t sidx = static_cast<std::size_t>(sy) * w + sx;
            if (binary.px[sidx] == 0 || label[sidx] >= 0) continue;
            const auto id = static_cast<std::int32_t>(rects.size());
            int min_x = sx, max_x = sx, min_y = sy, max_y = sy;
            label[sidx] = id;
            stack.push_back(static_cast<std::int64_t>(sidx));
            while (!stack.empty()) {
                const auto idx = static_cast<std::size_t>(stack.back());
                stack.pop_back();
                const int x = static_cast<int>(idx % static_cast<std::size_t>(w));
                const int y = static_cast<int>(idx / static_cast<std::size_t>(w));
                min_x = std::min(min_x, x);
                max_x = std::max(max_x, x);
                min_y = std::min(min_y, y);
                max_y = std::max(max_y, y);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0) continue;
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        const std::size_t nidx = static_cast<std::size_t>(ny) * w + nx;
                        if (binary.px[nidx] == 1 && label[nidx] < 0) {
                            label[nidx] = id;
                            stack.push_back(static_cast<std::int64_t>(nidx));
                        }
                    }
                }
            }
            rects.push_back({min_x, min_y, max_x - min_x + 1, max_y - min_y + 1});
        }
    }
    std::sort(rects.begin(), rects.end(), [](const Rect& a, const Rect& b) {
        return std::tie(a.y, a.x, a.w, a.h) < std::tie(b.y, b.x, b.w, b.h);
    });
    return rects;
}

std::vector<Rect> merge_rois(const std::vector<Rect>& rects, const MergeOptions& opts) {
    std::vector<Rect> work = rects;
    long long cap = 0;
    for (const auto& r : rects) cap = std::max(cap, r.area());

    while (work.size() > 1) {
        long long best_overlap = 0;
        std::size_t best_i = 0, best_j = 0;
        for (std::size_t i = 0; i < work.size(); ++i) {
            for (std::size_t j = i + 1; j < work.size(); ++j) {
                const long long inter = intersection_area(work[i], work[j]);
                if (inter <= 0) continue;
                const long long smaller = std::min(work[i].area(), work[j].area());
                if (static_cast<double>(inter) <=
                    opts.min_overlap_ratio * static_cast<double>(smaller))
                    continue;
                if (bounding_union(work[i], work[j]).area() > cap) continue;  // over the cap
                if (inter > best_overlap) {
                    best_overlap = inter;
                    best_i = i;
                    best_j = j;
                }
            }
        }
        if (best_overlap <= 0) break;  // no admissible merge left
        const Rect merged = bounding_union(work[best_i], work[best_j]);
        work[best_i] = merged;
        work.erase(work.begin() + static_cast<std::ptrdiff_t>(best_j));
    }

    std::sort(work.begin(), work.end(), [](const Rect& a, const Rect& b) {
        return std::tie(a.y, a.x, a.w, a.h) < std::tie(b.y, b.x, b.w, b.h);
    });
    return work;
}

std::vector<Rect> filter_by_size(const std::vector<Rect>& rects, long long min_area,
                                 long long max_area) {
    if (min_area > max_area)
        throw ValueError("min_area " + std::to_string(min_area) + " exceeds max_area " +
                         std::to_string(max_area));
    std::vector<Rect> out;
    for (const auto& r : rects)
        if (r.area() >= min_area && r.area() <= max_area) out.push_back(r);
    return out;
}

SegmentationResult crop_and_export(const Image& page, const std::vector<Rect>& rects,
                                   const std::filesystem::path& out_dir, int resolution,
                                   bool invert_ink, const std::string& page_id) {
    for (const auto& r : rects) {
        if (r.w <= 0 || r.h <= 0 || r.x < 0 || r.y < 0 || r.right() > page.width ||
            r.bottom() > page.height) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "rect (x=%d, y=%d, w=%d, h=%d) outside page bounds",
                          r.x, r.y, r.w, r.h);
            throw ValueError(buf);
        }
    }
    std::filesystem::create_directories(out_dir);

    SegmentationResult result;
    result.page_id = page_id;
    std::string stub;
    int index = 0;
    for (const auto& r : rects) {
        Image crop(r.w, r.h);
        for (int y = 0; y < r.h; ++y)
            for (int x = 0; x < r.w; ++x) crop.at(x, y) = page.at(r.x + x, r.y + y);
        if (invert_ink)
            for (double& v : crop.px) v = 1.0 - v;
        Image sized = resize_bilinear(crop, resolution, resolution);

        char name[64];
        std::snprintf(name, sizeof(name), "%s_%04d.png", page_id.c_str(), index);
        write_png_gray(out_dir / name, sized);

        result.rois.push_back(r);
        result.crops.push_back(std::move(sized));
        stub += std::string(name) + "\t\t\t\n";
        ++index;
    }
    atomic_write_file(out_dir / "manifest.stub.tsv", stub);
    return result;
}

SegmentationResult segment_page(const Image& page, const SegmentOptions& opts,
                                const std::filesystem::path& out_dir,
                                const std::string& page_id) {
    const BinaryImage binary = binarize(page, opts.binarize);
    const std::vector<Rect> initial = extract_initial_rois(binary);
    const std::vector<Rect> merged = merge_rois(initial, opts.merge);

    const long long max_area =
        opts.max_area < 0 ? static_cast<long long>(page.width) * page.height : opts.max_area;
    std::vector<Rect> kept = filter_by_size(merged, opts.min_area, max_area);

    SegmentationResult result =
        crop_and_export(page, kept, out_dir, opts.resolution, opts.invert_ink, page_id);
    for (const auto& r : merged) {
        if (std::find(kept.begin(), kept.end(), r) == kept.end())
            result.rejected.push_back(
                {r, "area " + std::to_string(r.area()) + " outside [" +
                        std::to_string(opts.min_area) + ", " + std::to_string(max_area) + "]"});
    }
    return result;
}

}  // namespace calli
