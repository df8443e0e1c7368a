#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "calli/conditioners.hpp"
#include "calli/glyph_corpus.hpp"
#include "calli/image.hpp"
#include "calli/trainer.hpp"

namespace calli {

struct SsimConstants {
    double L = 1.0;  // dynamic range of the inputs
    double c1() const { return (0.01 * L) * (0.01 * L); }
    double c2() const { return (0.03 * L) * (0.03 * L); }
};

// Global structural similarity over the whole image with population
// statistics. Result lies in [-1, 1]; 1 means identical.
double ssim(std::span<const double> x, std::span<const double> y, SsimConstants k = {});
double ssim(const Image& x, const Image& y, SsimConstants k = {});

// Gaussian-windowed mean SSIM (11x11, sigma 1.5 by default); kept behind its
// own entry point for comparison with common practice.
double ssim_windowed(const Image& x, const Image& y, SsimConstants k = {}, int window = 11,
                     double sigma = 1.5);

struct CharacterEval {
    char32_t label = 0;
    std::vector<double> sample_ssim;
    double mean_ssim = 0.0;
};

struct EvalReport {
    std::vector<CharacterEval> per_character;
    double mean_ssim = 0.0;
    std::string provider_tag;
    std::string checkpoint_id;
    std::string sample_grid_path;
};

// Produces n samples in [-1, 1] (columns) for one character; the rng stream
// is derived per character so evaluation order cannot matter.
using SampleFn = std::function<Matrix(char32_t label, int n_samples, Rng& rng)>;

// Shared evaluation core: per-character generation, SSIM against ground
// truth in [0, 1], per-character means, overall mean.
EvalReport evaluate_with_sampler(const std::vector<ManifestRecord>& records,
                                 const std::filesystem::path& base_dir, int resolution,
                                 const SampleFn& sampler, int n_samples_per_char,
                                 std::uint64_t seed,
                                 const std::filesystem::path& grid_out = {});

// Full path: ancestral sampling from the checkpoint for every character in
// the test manifest. Unencodable labels are reported up front.
EvalReport evaluate_model(ModelCheckpoint& ckpt, const Manifest& test_manifest,
                          const std::filesystem::path& base_dir, Conditioner* conditioner,
                          int n_samples_per_char, std::uint64_t seed,
                          const std::filesystem::path& grid_out = {});

struct ReportRow {
    std::string method;
    double ssim = 0.0;
    std::string trainset_size;
    bool external = false;  // reported value, not produced by this run
};

// Reference values from the method-comparison table; never recomputed here.
std::vector<ReportRow> paper_citation_rows();

// Aligned text table `method | SSIM | stylized trainingset size`; numbers are
// printed with shortest round-trip precision, external rows carry a marker.
std::string compare_report(const std::vector<ReportRow>& rows);
std::vector<ReportRow> parse_compare_report(const std::string& text);

}  // namespace calli
