#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "calli/common.hpp"
#include "calli/stroke_codec.hpp"
#include "test_util.hpp"

using namespace calli;

namespace {

std::filesystem::path bundled_dict() {
    if (const char* env = std::getenv("CALLI_DATA"))
        return std::filesystem::path(env) / "stroke_dict.tsv";
    return std::filesystem::path(__FILE__).parent_path().parent_path() / "data" /
           "stroke_dict.tsv";
}

}  // namespace

TEST_CASE("vocabulary is a bijection over its 34 entries") {
    int count = 0;
    for (int id = 0; id < vocab::kSize; ++id) {
        if (id < 3) continue;  // specials have no symbol
        const char sym = vocab::id_to_symbol(id);
        CHECK(vocab::symbol_to_id(sym) == id);
        ++count;
    }
    CHECK(count == 31);
    CHECK(vocab::symbol_to_id('1') == 3);
    CHECK(vocab::symbol_to_id('5') == 7);
    CHECK(vocab::symbol_to_id('a') == 8);
    CHECK(vocab::symbol_to_id('z') == 33);
    CHECK_THROWS_AS(vocab::symbol_to_id('0'), ValueError);
    CHECK_THROWS_AS(vocab::id_to_symbol(2), ValueError);
    CHECK_THROWS_AS(vocab::id_to_symbol(34), ValueError);
}

TEST_CASE("encode_character returns the documented combined code") {
    const StrokeDictionary dict = StrokeDictionary::load(bundled_dict());
    const StrokeCode jie = encode_character(U'借', dict);
    CHECK(jie.stroke_digits == "3212212511");
    CHECK(jie.wubi == "wajg");
    CHECK(jie.combined == "3212212511wajg");

    const StrokeCode yi = encode_character(U'一', dict);
    CHECK(yi.stroke_digits == "1");

    for (const auto& e : dict.entries())
        CHECK(e.combined.size() == e.stroke_digits.size() + e.wubi.size());

    CHECK_THROWS_AS(encode_character(U'鑫', dict), UnknownLabelError);
}

TEST_CASE("tokenize produces bos/ids/eos") {
    CHECK(tokenize(std::string("321w")) == std::vector<int>{1, 5, 4, 3, 30, 2});
    CHECK(tokenize(std::string("")) == std::vector<int>{1, 2});
}

TEST_CASE("detokenize inverts tokenize") {
    CHECK(detokenize({1, 2}).empty());
    CHECK(detokenize({1, 3, 2}) == "1");
    CHECK_THROWS_AS(detokenize({1, 99, 2}), ValueError);
    CHECK_THROWS_AS(detokenize({3, 3, 2}), ValueError);
    CHECK_THROWS_AS(detokenize({1}), ValueError);

    const StrokeDictionary dict = StrokeDictionary::load(bundled_dict());
    for (const auto& e : dict.entries()) {
        const auto ids = tokenize(e);
        for (int id : ids) {
            CHECK(id >= 0);
            CHECK(id <= 33);
        }
        CHECK(detokenize(ids) == e.combined);
        CHECK(ids.size() == e.combined.size() + 2);
    }
}

TEST_CASE("dictionary loader validates entries") {
    testutil::TempDir dir("dict");
    SUBCASE("wubi too long") {
        atomic_write_file(dir / "bad.tsv", std::string("\xe4\xb8\x80\t1\tabcde\n"));
        CHECK_THROWS_AS(StrokeDictionary::load(dir / "bad.tsv"), ParseError);
    }
    SUBCASE("bad stroke digit without folding") {
        atomic_write_file(dir / "bad.tsv", std::string("\xe4\xb8\x80\t19\tgg\n"));
        CHECK_THROWS_AS(StrokeDictionary::load(dir / "bad.tsv", /*fold_other=*/false), ParseError);
        // with folding, 9 collapses into class 5
        const StrokeDictionary d = StrokeDictionary::load(dir / "bad.tsv", true);
        CHECK(d.at(U'一').stroke_digits == "15");
    }
    SUBCASE("overlong sequence rejected") {
        atomic_write_file(dir / "bad.tsv",
                          std::string("\xe4\xb8\x80\t") + std::string(60, '1') + "\tgggg\n");
        CHECK_THROWS_AS(StrokeDictionary::load(dir / "bad.tsv"), ParseError);
    }
    SUBCASE("duplicate entry rejected") {
        atomic_write_file(dir / "bad.tsv",
                          std::string("\xe4\xb8\x80\t1\tgg\n\xe4\xb8\x80\t1\tgg\n"));
        CHECK_THROWS_AS(StrokeDictionary::load(dir / "bad.tsv"), ParseError);
    }
}

TEST_CASE("canonical tsv is sorted and reloadable") {
    const StrokeDictionary dict = StrokeDictionary::load(bundled_dict());
    testutil::TempDir dir("dict2");
    atomic_write_file(dir / "canon.tsv", dict.to_tsv());
    const StrokeDictionary back = StrokeDictionary::load(dir / "canon.tsv");
    CHECK(back.size() == dict.size());
    CHECK(back.to_tsv() == dict.to_tsv());
    char32_t prev = 0;
    for (const auto& e : StrokeDictionary::load(dir / "canon.tsv").entries()) {
        CHECK(e.character > prev);
        prev = e.character;
    }
}
