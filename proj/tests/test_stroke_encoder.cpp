#include <doctest.h>

#include <cmath>
#include <cstdlib>

#include "calli/common.hpp"
#include "calli/stroke_codec.hpp"
#include "calli/stroke_encoder.hpp"
#include "test_util.hpp"

using namespace calli;

namespace {

EncoderConfig small_config() {
    EncoderConfig cfg;
    cfg.hidden_dim = 32;
    cfg.layers = 2;
    cfg.heads = 2;
    return cfg;
}

std::vector<StrokeCode> toy_corpus() {
    std::vector<StrokeCode> out;
    const char* digits[] = {"1", "12", "251", "2511", "1234", "34", "134", "3212212511"};
    const char* wubi[] = {"g", "fg", "kk", "jj", "ss", "ww", "dd", "wajg"};
    for (int i = 0; i < 8; ++i) {
        StrokeCode c;
        c.character = static_cast<char32_t>(0x4E00 + i);
        c.stroke_digits = digits[i];
        c.wubi = wubi[i];
        c.combined = c.stroke_digits + c.wubi;
        out.push_back(c);
    }
    return out;
}

}  // namespace

TEST_CASE("logits have the contracted shape and are finite") {
    StrokeEncoder model(small_config(), 1);
    const std::vector<int> prefix = {1, 5, 4, 3, 30};
    const Matrix logits = model.next_token_logits(prefix);
    CHECK(logits.rows() == 5);
    CHECK(logits.cols() == 34);
    CHECK(logits.allFinite());
    CHECK_THROWS_AS(model.next_token_logits(std::vector<int>(65, 3)), ValueError);
    CHECK_THROWS_AS(model.next_token_logits(std::vector<int>{1, 99}), ValueError);
}

TEST_CASE("causality: perturbing token j changes logits only at positions >= j") {
    StrokeEncoder model(small_config(), 2);
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int len = static_cast<int>(rng.uniform_int(3, 12));
        std::vector<int> prefix(static_cast<std::size_t>(len));
        for (auto& t : prefix) t = static_cast<int>(rng.uniform_int(3, 33));
        const int j = static_cast<int>(rng.uniform_int(1, len - 1));
        std::vector<int> altered = prefix;
        altered[static_cast<std::size_t>(j)] =
            3 + (altered[static_cast<std::size_t>(j)] - 3 + 7) % 31;

        const Matrix a = model.next_token_logits(prefix);
        const Matrix b = model.next_token_logits(altered);
        for (int i = 0; i < j; ++i)
            CHECK((a.row(i) - b.row(i)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((a.row(j) - b.row(j)).cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("fresh model scores near the uniform baseline") {
    StrokeEncoder model(small_config(), 4);
    Rng rng(5);
    std::vector<std::vector<int>> batch;
    for (int i = 0; i < 64; ++i) {
        std::vector<int> seq;
        seq.push_back(vocab::kBos);
        const int len = static_cast<int>(rng.uniform_int(4, 20));
        for (int t = 0; t < len; ++t) seq.push_back(static_cast<int>(rng.uniform_int(3, 33)));
        seq.push_back(vocab::kEos);
        batch.push_back(std::move(seq));
    }
    const double ce = model.evaluate_loss(batch);
    CHECK(ce == doctest::Approx(std::log(34.0)).epsilon(0.1 / std::log(34.0)));
}

TEST_CASE("training reduces loss and a single sequence is memorized") {
    const auto corpus = toy_corpus();
    SUBCASE("loss decreases over a short run") {
        EncoderMeta meta;
        train_encoder(corpus, small_config(), 11, 300, &meta, 8, 3e-3);
        REQUIRE(meta.loss_curve.size() == 300);
        const auto median_of = [&](std::size_t lo, std::size_t hi) {
            std::vector<double> v(meta.loss_curve.begin() + static_cast<std::ptrdiff_t>(lo),
                                  meta.loss_curve.begin() + static_cast<std::ptrdiff_t>(hi));
            std::sort(v.begin(), v.end());
            return v[v.size() / 2];
        };
        CHECK(median_of(270, 300) < median_of(0, 30));
        CHECK(meta.final_loss < std::log(34.0));
    }
    SUBCASE("single repeated sequence collapses to near zero") {
        const std::vector<StrokeCode> single(4, corpus.back());
        EncoderMeta meta;
        train_encoder(single, small_config(), 12, 500, &meta, 4, 3e-3);
        CHECK(meta.final_loss < 0.1);
    }
    SUBCASE("identical seeds give bitwise identical checkpoints") {
        StrokeEncoder a = train_encoder(corpus, small_config(), 13, 50, nullptr, 4, 1e-3);
        StrokeEncoder b = train_encoder(corpus, small_config(), 13, 50, nullptr, 4, 1e-3);
        CHECK(nn::params_equal(a.parameters(), b.parameters()));
        StrokeEncoder c = train_encoder(corpus, small_config(), 14, 50, nullptr, 4, 1e-3);
        CHECK_FALSE(nn::params_equal(a.parameters(), c.parameters()));
    }
    SUBCASE("empty corpus is rejected") {
        CHECK_THROWS_AS(train_encoder({}, small_config(), 1, 10), ValueError);
    }
}

TEST_CASE("embed returns the 128-d final-position state deterministically") {
    EncoderConfig cfg;  // paper-fixed embedding width
    cfg.hidden_dim = 128;
    cfg.layers = 2;
    cfg.heads = 4;
    StrokeEncoder model(cfg, 21);
    StrokeCode code;
    code.character = U'借';
    code.stroke_digits = "3212212511";
    code.wubi = "wajg";
    code.combined = "3212212511wajg";

    const Vector e1 = model.embed(code);
    const Vector e2 = model.embed(code);
    CHECK(e1.size() == 128);
    CHECK(e1.allFinite());
    CHECK((e1 - e2).cwiseAbs().maxCoeff() == 0.0);

    // embed() is the hidden state the tokenized sequence produces
    const auto tokens = tokenize(code);
    const Vector e3 = model.embed_tokens(tokens);
    CHECK((e1 - e3).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("shared stroke prefixes embed closer than disjoint codes") {
    // probe set: two codes sharing a long digit prefix, one disjoint
    std::vector<StrokeCode> corpus = toy_corpus();
    StrokeCode a, b, c;
    a.character = U'好';
    a.stroke_digits = "5315211234";
    a.wubi = "vb";
    a.combined = a.stroke_digits + a.wubi;
    b.character = U'妈';
    b.stroke_digits = "5315215512";
    b.wubi = "vc";
    b.combined = b.stroke_digits + b.wubi;
    c.character = U'口';
    c.stroke_digits = "2514444333";
    c.wubi = "kq";
    c.combined = c.stroke_digits + c.wubi;
    corpus.push_back(a);
    corpus.push_back(b);
    corpus.push_back(c);

    EncoderConfig cfg;
    cfg.hidden_dim = 128;
    cfg.layers = 2;
    cfg.heads = 4;
    StrokeEncoder model = train_encoder(corpus, cfg, 31, 400, nullptr, 8, 1e-3);

    const auto cosine = [](const Vector& x, const Vector& y) {
        return x.dot(y) / (x.norm() * y.norm());
    };
    const Vector ea = model.embed(a), eb = model.embed(b), ec = model.embed(c);
    CHECK(cosine(ea, eb) > cosine(ea, ec));
}

TEST_CASE("encoder checkpoints round trip exactly") {
    testutil::TempDir dir("enc");
    const auto corpus = toy_corpus();
    EncoderMeta meta;
    StrokeEncoder model = train_encoder(corpus, small_config(), 41, 20, &meta, 4, 1e-3);
    save_encoder_checkpoint(dir / "enc.ckpt", model, meta);

    LoadedEncoder loaded = load_encoder_checkpoint(dir / "enc.ckpt");
    CHECK(loaded.model->config() == model.config());
    CHECK(loaded.meta.steps == 20);
    CHECK(loaded.meta.final_loss == meta.final_loss);
    CHECK(nn::params_equal(loaded.model->parameters(), model.parameters()));

    SUBCASE("version and corruption checks") {
        std::string bytes = read_text_file(dir / "enc.ckpt");
        std::string wrong_version = bytes;
        wrong_version[4] = 9;  // bump the version field
        atomic_write_file(dir / "bad_version.ckpt", wrong_version);
        CHECK_THROWS_AS(load_encoder_checkpoint(dir / "bad_version.ckpt"), VersionError);

        atomic_write_file(dir / "truncated.ckpt", bytes.substr(0, bytes.size() / 2));
        CHECK_THROWS_AS(load_encoder_checkpoint(dir / "truncated.ckpt"), CorruptFileError);

        atomic_write_file(dir / "not_a.ckpt", std::string("garbage"));
        CHECK_THROWS_AS(load_encoder_checkpoint(dir / "not_a.ckpt"), CorruptFileError);
    }
}

TEST_CASE("config invariants") {
    EncoderConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.hidden_dim = 127;  // not divisible by heads
    CHECK_THROWS_AS(cfg.validate(), ValueError);
    cfg = EncoderConfig{};
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValueError);
}
