#include <doctest.h>

#include <algorithm>
#include <functional>
#include <limits>
#include <map>
#include <numeric>

#include "calli/common.hpp"
#include "calli/page_segmenter.hpp"
#include "calli/rng.hpp"
#include "test_util.hpp"

using namespace calli;

namespace {

// Independent connected-component oracle: union-find over ink pixels with
// 8-connectivity, reporting per-component tight boxes.
std::vector<Rect> cc_oracle(const BinaryImage& bin) {
    const int w = bin.width, h = bin.height;
    std::vector<int> parent(static_cast<std::size_t>(w) * h);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int a) {
        while (parent[static_cast<std::size_t>(a)] != a) {
            parent[static_cast<std::size_t>(a)] =
                parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
            a = parent[static_cast<std::size_t>(a)];
        }
        return a;
    };
    const auto unite = [&](int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!bin.at(x, y)) continue;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h || !bin.at(nx, ny)) continue;
                    unite(y * w + x, ny * w + nx);
                }
        }
    std::map<int, Rect> boxes;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!bin.at(x, y)) continue;
            const int root = find(y * w + x);
            auto it = boxes.find(root);
            if (it == boxes.end()) {
                boxes[root] = {x, y, 1, 1};
            } else {
                Rect& r = it->second;
                const int x1 = std::max(r.right(), x + 1);
                const int y1 = std::max(r.bottom(), y + 1);
                r.x = std::min(r.x, x);
                r.y = std::min(r.y, y);
                r.w = x1 - r.x;
                r.h = y1 - r.y;
            }
        }
    std::vector<Rect> out;
    for (auto& [root, rect] : boxes) out.push_back(rect);
    std::sort(out.begin(), out.end(), [](const Rect& a, const Rect& b) {
        return std::tie(a.y, a.x, a.w, a.h) < std::tie(b.y, b.x, b.w, b.h);
    });
    return out;
}

std::size_t ink_count(const BinaryImage& b) {
    std::size_t n = 0;
    for (auto v : b.px) n += v;
    return n;
}

std::size_t ink_in_rects(const BinaryImage& b, const std::vector<Rect>& rects) {
    std::size_t n = 0;
    for (int y = 0; y < b.height; ++y)
        for (int x = 0; x < b.width; ++x) {
            if (!b.at(x, y)) continue;
            for (const auto& r : rects)
                if (x >= r.x && x < r.right() && y >= r.y && y < r.bottom()) {
                    ++n;
                    break;
                }
        }
    return n;
}

}  // namespace

TEST_CASE("binarize fixed threshold marks dark pixels as ink") {
    Image page(4, 1, 1.0);  // white
    page.at(1, 0) = 0.0;    // black
    page.at(2, 0) = 200.0 / 255.0;
    const BinaryImage bin = binarize(page, BinarizeMode::fixed(128));
    CHECK(bin.at(0, 0) == 0);
    CHECK(bin.at(1, 0) == 1);
    CHECK(bin.at(2, 0) == 0);
    for (auto v : bin.px) CHECK((v == 0 || v == 1));
}

TEST_CASE("binarize of an all-background page is all zero") {
    const Image page(16, 16, 1.0);
    for (auto mode : {BinarizeMode::otsu(), BinarizeMode::fixed(128)}) {
        const BinaryImage bin = binarize(page, mode);
        CHECK(ink_count(bin) == 0);
    }
    CHECK_THROWS_AS(binarize(Image(), BinarizeMode::otsu()), ValueError);
}

TEST_CASE("automatic threshold lands between two clusters") {
    // two Gaussian-ish pixel clusters at byte values 50 and 200
    Image page(64, 64);
    Rng rng(21);
    for (std::size_t i = 0; i < page.px.size(); ++i) {
        const bool dark = i < page.px.size() / 3;
        const double base = dark ? 50.0 : 200.0;
        const double v = base + rng.gaussian() * 8.0;
        page.px[i] = std::clamp(v, 0.0, 255.0) / 255.0;
    }
    const BinaryImage bin = binarize(page, BinarizeMode::otsu());
    // histogram oracle: every pixel near 50 is ink, every pixel near 200 is not
    for (std::size_t i = 0; i < page.px.size(); ++i) {
        const double byte = page.px[i] * 255.0;
        if (byte < 100) CHECK(bin.px[i] == 1);
        if (byte > 150) CHECK(bin.px[i] == 0);
    }
    SUBCASE("invert flag flips ink polarity") {
        BinarizeMode inv = BinarizeMode::otsu();
        inv.invert = true;
        const BinaryImage flipped = binarize(page, inv);
        for (std::size_t i = 0; i < page.px.size(); ++i)
            CHECK(flipped.px[i] == 1 - bin.px[i]);
    }
}

TEST_CASE("extract_initial_rois boxes each component") {
    BinaryImage bin(32, 32);
    for (int y = 5; y < 15; ++y)
        for (int x = 5; x < 15; ++x) bin.at(x, y) = 1;
    const auto rois = extract_initial_rois(bin);
    REQUIRE(rois.size() == 1);
    CHECK(rois[0] == Rect{5, 5, 10, 10});

    SUBCASE("blank page yields nothing") {
        CHECK(extract_initial_rois(BinaryImage(8, 8)).empty());
    }
    SUBCASE("two disjoint strokes match the oracle") {
        BinaryImage two(32, 32);
        for (int x = 2; x < 12; ++x) two.at(x, 3) = 1;
        for (int y = 10; y < 20; ++y) two.at(25, y) = 1;
        const auto got = extract_initial_rois(two);
        REQUIRE(got.size() == 2);
        CHECK(got == cc_oracle(two));
    }
}

TEST_CASE("extraction matches the union-find oracle on random noise") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        BinaryImage bin(24, 24);
        for (auto& v : bin.px) v = rng.uniform() < 0.25 ? 1 : 0;
        CHECK(extract_initial_rois(bin) == cc_oracle(bin));
    }
}

TEST_CASE("merge_rois merges under the area cap") {
    // largest initial area is 400; union of the first two has area 289
    const std::vector<Rect> rects = {{0, 0, 10, 10}, {5, 5, 12, 12}, {100, 100, 20, 20}};
    const auto merged = merge_rois(rects);
    REQUIRE(merged.size() == 2);
    CHECK(merged[0] == Rect{0, 0, 17, 17});
    CHECK(merged[1] == Rect{100, 100, 20, 20});
}

TEST_CASE("merge_rois leaves disjoint rects unchanged") {
    const std::vector<Rect> rects = {{0, 0, 4, 4}, {10, 10, 4, 4}};
    CHECK(merge_rois(rects) == rects);
}

TEST_CASE("merge_rois refuses merges beyond the largest initial area") {
    // the documented strip counterexample: union area 400 > largest initial 20
    const std::vector<Rect> strips = {{0, 0, 20, 1}, {0, 19, 20, 1}};
    CHECK(merge_rois(strips) == strips);

    // a genuinely overlapping pair whose union would blow the cap
    const std::vector<Rect> pair = {{0, 0, 20, 2}, {0, 1, 2, 19}};
    const auto merged = merge_rois(pair);
    CHECK(merged.size() == 2);
    CHECK(Rect{0, 0, 20, 20}.area() > 40);
}

TEST_CASE("merge cap invariant over random rectangle sets") {
    Rng rng(41);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<Rect> rects;
        const int n = static_cast<int>(rng.uniform_int(1, 12));
        long long cap = 0;
        for (int i = 0; i < n; ++i) {
            Rect r{static_cast<int>(rng.uniform_int(0, 80)), static_cast<int>(rng.uniform_int(0, 80)),
                   static_cast<int>(rng.uniform_int(1, 30)), static_cast<int>(rng.uniform_int(1, 30))};
            cap = std::max(cap, r.area());
            rects.push_back(r);
        }
        for (const auto& m : merge_rois(rects)) {
            const bool is_original = std::find(rects.begin(), rects.end(), m) != rects.end();
            if (!is_original) CHECK(m.area() <= cap);
        }
    }
}

TEST_CASE("merge_rois keeps coverage monotone") {
    Rng rng(51);
    BinaryImage bin(64, 64);
    for (auto& v : bin.px) v = rng.uniform() < 0.1 ? 1 : 0;
    const auto initial = extract_initial_rois(bin);
    const auto merged = merge_rois(initial);
    const std::size_t total = ink_count(bin);
    CHECK(ink_in_rects(bin, initial) == total);
    CHECK(ink_in_rects(bin, merged) == total);  // no pixels created or destroyed
}

TEST_CASE("filter_by_size keeps the requested band") {
    const std::vector<Rect> rects = {{0, 0, 3, 3}, {10, 0, 10, 10}, {30, 0, 100, 50}};
    const auto kept = filter_by_size(rects, 50, 1000);
    REQUIRE(kept.size() == 1);
    CHECK(kept[0].area() == 100);
    CHECK(filter_by_size(rects, 0, std::numeric_limits<long long>::max()) == rects);
    CHECK(filter_by_size(rects, 5000, 6000).empty());
    CHECK_THROWS_AS(filter_by_size(rects, 10, 5), ValueError);
}

TEST_CASE("crop_and_export round trips and rejects bad rects") {
    testutil::TempDir dir("crops");
    Image page(32, 32, 1.0);
    for (int y = 4; y < 12; ++y)
        for (int x = 4; x < 12; ++x) page.at(x, y) = 0.0;

    SUBCASE("crop equals the page subwindow when no resampling happens") {
        const Rect r{2, 2, 8, 8};
        const auto result = crop_and_export(page, {r}, dir.path(), 8);
        REQUIRE(result.crops.size() == 1);
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(result.crops[0].at(x, y) == page.at(r.x + x, r.y + y));
        const Image reread = read_png_gray(dir / "page_0000.png");
        for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x)
                CHECK(reread.at(x, y) == doctest::Approx(page.at(r.x + x, r.y + y)).epsilon(1e-9));
    }
    SUBCASE("three rects give three files and three stub lines") {
        const auto result =
            crop_and_export(page, {{0, 0, 8, 8}, {8, 8, 8, 8}, {16, 16, 8, 8}}, dir.path(), 16);
        CHECK(result.crops.size() == 3);
        CHECK(result.rois.size() == 3);
        const std::string stub = read_text_file(dir / "manifest.stub.tsv");
        CHECK(std::count(stub.begin(), stub.end(), '\n') == 3);
        for (const auto& line_ending : {"\t\t\t"})
            CHECK(stub.find(line_ending) != std::string::npos);
    }
    SUBCASE("out-of-bounds rect is named in the error") {
        try {
            crop_and_export(page, {{30, 30, 8, 8}}, dir.path(), 8);
            FAIL("expected ValueError");
        } catch (const ValueError& e) {
            CHECK(std::string(e.what()).find("x=30") != std::string::npos);
        }
    }
}

TEST_CASE("pipeline recovers disjoint glyphs with high IoU") {
    // k separated dark squares on a light page
    testutil::TempDir dir("seg");
    Image page(128, 128, 1.0);
    std::vector<Rect> truth;
    for (int i = 0; i < 4; ++i) {
        const int x0 = 8 + (i % 2) * 64, y0 = 8 + (i / 2) * 64;
        for (int y = 0; y < 20; ++y)
            for (int x = 0; x < 20; ++x) page.at(x0 + x, y0 + y) = 0.05;
        truth.push_back({x0, y0, 20, 20});
    }
    SegmentOptions opts;
    opts.resolution = 16;
    const auto result = segment_page(page, opts, dir.path());
    REQUIRE(result.rois.size() == truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) CHECK(iou(result.rois[i], truth[i]) >= 0.8);
}
