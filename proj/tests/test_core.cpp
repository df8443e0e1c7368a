#include <doctest.h>

#include <set>

#include "calli/common.hpp"
#include "calli/image.hpp"
#include "calli/parallel.hpp"
#include "calli/rng.hpp"
#include "test_util.hpp"

using namespace calli;

TEST_CASE("utf8 round trip") {
    const std::string s = "借一二 abc";
    CHECK(utf8_encode(utf8_decode(s)) == s);
    CHECK(utf8_decode("借").size() == 1);
    CHECK_THROWS_AS(utf8_decode("\xFF\xFE"), ParseError);
}

TEST_CASE("rng determinism and moments") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng g(7);
    double sum = 0, sq = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double v = g.gaussian();
        sum += v;
        sq += v * v;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 3.0 * std::sqrt(2.0 / n));

    // uniform_int covers the range
    std::set<std::int64_t> seen;
    for (int i = 0; i < 1000; ++i) seen.insert(g.uniform_int(3, 7));
    CHECK(seen == std::set<std::int64_t>{3, 4, 5, 6, 7});
}

TEST_CASE("derived streams differ") {
    Rng a = Rng::derive(1, 0);
    Rng b = Rng::derive(1, 1);
    bool differ = false;
    for (int i = 0; i < 8; ++i) differ |= (a.next_u64() != b.next_u64());
    CHECK(differ);
}

TEST_CASE("parallel_for covers every task exactly once under any thread count") {
    for (int threads : {1, 2, 5}) {
        set_num_threads(threads);
        std::vector<int> hits(257, 0);
        parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
        for (int h : hits) CHECK(h == 1);
    }
    set_num_threads(0);
}

TEST_CASE("gemm matches Eigen regardless of thread count") {
    Rng rng(3);
    Matrix A(17, 23), B(23, 1031);
    for (Eigen::Index i = 0; i < A.size(); ++i) A.data()[i] = rng.gaussian();
    for (Eigen::Index i = 0; i < B.size(); ++i) B.data()[i] = rng.gaussian();
    const Matrix expect = A * B;
    for (int threads : {1, 3}) {
        set_num_threads(threads);
        Matrix C;
        gemm(C, A, B);
        CHECK((C - expect).cwiseAbs().maxCoeff() == 0.0);
    }
    set_num_threads(0);
}

TEST_CASE("png round trip is exact for 8-bit data") {
    testutil::TempDir dir("png");
    Image img(9, 5);
    Rng rng(11);
    for (double& v : img.px) v = static_cast<double>(rng.uniform_int(0, 255)) / 255.0;
    write_png_gray(dir / "a.png", img);
    const Image back = read_png_gray(dir / "a.png");
    REQUIRE(back.width == img.width);
    REQUIRE(back.height == img.height);
    for (std::size_t i = 0; i < img.px.size(); ++i) CHECK(back.px[i] == doctest::Approx(img.px[i]).epsilon(1e-12));
}

TEST_CASE("png encoding is byte deterministic") {
    Image img(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) img.at(x, y) = ((x + y) % 7) / 6.0;
    CHECK(encode_png_gray(img) == encode_png_gray(img));
}

TEST_CASE("atomic write leaves no partial file on rename") {
    testutil::TempDir dir("atomic");
    atomic_write_file(dir / "x.txt", std::string("hello"));
    CHECK(read_text_file(dir / "x.txt") == "hello");
    // temp files cleaned up
    int files = 0;
    for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++files;
    CHECK(files == 1);
}

TEST_CASE("resize identity when sizes match") {
    Image img(8, 8);
    for (std::size_t i = 0; i < img.px.size(); ++i) img.px[i] = static_cast<double>(i) / 63.0;
    const Image same = resize_bilinear(img, 8, 8);
    CHECK(same.px == img.px);
    const Image up = resize_bilinear(img, 16, 16);
    CHECK(up.width == 16);
}
