#include "calli/evaluator.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <cmath>
#include <sstream>
#include <thread>

#include "calli/common.hpp"
#include "calli/diffusion.hpp"

namespace calli {

double ssim(std::span<const double> x, std::span<const double> y, SsimConstants k) {
    if (x.size() != y.size() || x.empty()) throw ShapeError("ssim inputs must match in shape");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] < 0 || x[i] > k.L || y[i] < 0 || y[i] > k.L)
            throw ValueError("ssim inputs must lie in [0, L]");
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double vx = 0, vy = 0, cov = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx, dy = y[i] - my;
        vx += dx * dx;
        vy += dy * dy;
        cov += dx * dy;
    }
    vx /= n;  // population statistics
    vy /= n;
    cov /= n;
    const double c1 = k.c1(), c2 = k.c2();
    return ((2 * mx * my + c1) * (2 * cov + c2)) /
           ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double ssim(const Image& x, const Image& y, SsimConstants k) {
    if (x.width != y.width || x.height != y.height)
        throw ShapeError("ssim inputs must match in shape");
    return ssim(std::span<const double>(x.px), std::span<const double>(y.px), k);
}

double ssim_windowed(const Image& x, const Image& y, SsimConstants k, int window, double sigma) {
    if (x.width != y.width || x.height != y.height)
        throw ShapeError("ssim inputs must match in shape");
    if (window < 1 || window > std::min(x.width, x.height))
        throw ValueError("window does not fit inside the image");
    std::vector<double> kernel(static_cast<std::size_t>(window) * window);
    const double mid = (window - 1) / 2.0;
    double ksum = 0;
    for (int j = 0; j < window; ++j)
        for (int i = 0; i < window; ++i) {
            const double d2 = (i - mid) * (i - mid) + (j - mid) * (j - mid);
            const double v = std::exp(-d2 / (2 * sigma * sigma));
            kernel[static_cast<std::size_t>(j) * window + i] = v;
            ksum += v;
        }
    for (double& v : kernel) v /= ksum;

    const double c1 = k.c1(), c2 = k.c2();
    double total = 0;
    std::size_t count = 0;
    for (int oy = 0; oy + window <= x.height; ++oy) {
        for (int ox = 0; ox + window <= x.width; ++ox) {
            double mx = 0, my = 0, mxx = 0, myy = 0, mxy = 0;
            for (int j = 0; j < window; ++j)
                for (int i = 0; i < window; ++i) {
                    const double w = kernel[static_cast<std::size_t>(j) * window + i];
                    const double a = x.at(ox + i, oy + j);
                    const double b = y.at(ox + i, oy + j);
                    mx += w * a;
                    my += w * b;
                    mxx += w * a * a;
                    myy += w * b * b;
                    mxy += w * a * b;
                }
            const double vx = mxx - mx * mx;
            const double vy = myy - my * my;
            const double cov = mxy - mx * my;
            total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

// --- model evaluation ---------------------------------------------------------

EvalReport evaluate_with_sampler(const std::vector<ManifestRecord>& records,
                                 const std::filesystem::path& base_dir, int resolution,
                                 const SampleFn& sampler, int n_samples_per_char,
                                 std::uint64_t seed, const std::filesystem::path& grid_out) {
    if (records.empty()) throw ValueError("no records to evaluate");
    if (n_samples_per_char < 1) throw ValueError("need at least one sample per character");

    const auto n_chars = records.size();
    std::vector<CharacterEval> evals(n_chars);
    std::vector<Matrix> samples(n_chars);  // kept for the grid image
    std::vector<std::vector<double>> truths(n_chars);

    const auto run_one = [&](std::size_t i) {
        const auto& rec = records[i];
        const GlyphImage gt = load_glyph_image(base_dir / rec.image_path, rec, resolution);
        std::vector<double> gt01(gt.pixels.size());
        for (std::size_t p = 0; p < gt01.size(); ++p) gt01[p] = (gt.pixels[p] + 1.0) / 2.0;

        Rng rng = Rng::derive(seed, i);
        Matrix gen = sampler(rec.label, n_samples_per_char, rng);
        if (gen.rows() != static_cast<Eigen::Index>(gt01.size()) ||
            gen.cols() != n_samples_per_char)
            throw ShapeError("sampler returned the wrong shape");

        CharacterEval ce;
        ce.label = rec.label;
        std::vector<double> gen01(gt01.size());
        for (int s = 0; s < n_samples_per_char; ++s) {
            for (std::size_t p = 0; p < gen01.size(); ++p)
                gen01[p] = (gen(static_cast<Eigen::Index>(p), s) + 1.0) / 2.0;
            ce.sample_ssim.push_back(ssim(gen01, gt01));
        }
        double sum = 0;
        for (double v : ce.sample_ssim) sum += v;
        ce.mean_ssim = sum / static_cast<double>(ce.sample_ssim.size());
        evals[i] = std::move(ce);
        samples[i] = std::move(gen);
        truths[i] = std::move(gt01);
    };

    // Parallel across characters; the derived rng streams make the result
    // independent of scheduling.
    const unsigned workers =
        std::min<unsigned>(static_cast<unsigned>(num_threads()), static_cast<unsigned>(n_chars));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n_chars; ++i) run_one(i);
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < n_chars; i += workers) run_one(i);
            });
        for (auto& t : pool) t.join();
    }

    EvalReport report;
    report.per_character = std::move(evals);
    double sum = 0;
    for (const auto& ce : report.per_character) sum += ce.mean_ssim;
    report.mean_ssim = sum / static_cast<double>(n_chars);

    if (!grid_out.empty()) {
        // one row per character: ground truth on the left, samples after it
        const int cell = resolution;
        const int pad = 2;
        const int cols = 1 + n_samples_per_char;
        Image grid(cols * (cell + pad) + pad, static_cast<int>(n_chars) * (cell + pad) + pad, 0.25);
        const auto blit = [&](const std::vector<double>& px01, int col, int row) {
            const int ox = pad + col * (cell + pad);
            const int oy = pad + row * (cell + pad);
            for (int y = 0; y < cell; ++y)
                for (int x = 0; x < cell; ++x)
                    grid.at(ox + x, oy + y) = px01[static_cast<std::size_t>(y) * cell + x];
        };
        for (std::size_t i = 0; i < n_chars; ++i) {
            blit(truths[i], 0, static_cast<int>(i));
            std::vector<double> buf(truths[i].size());
            for (int s = 0; s < n_samples_per_char; ++s) {
                for (std::size_t p = 0; p < buf.size(); ++p)
                    buf[p] = (samples[i](static_cast<Eigen::Index>(p), s) + 1.0) / 2.0;
                blit(buf, 1 + s, static_cast<int>(i));
            }
        }
        write_png_gray(grid_out, grid);
        report.sample_grid_path = grid_out.string();
    }
    return report;
}

EvalReport evaluate_model(ModelCheckpoint& ckpt, const Manifest& test_manifest,
                          const std::filesystem::path& base_dir, Conditioner* conditioner,
                          int n_samples_per_char, std::uint64_t seed,
                          const std::filesystem::path& grid_out) {
    if (!ckpt.model) throw ValueError("checkpoint holds no model");
    const auto& cfg = ckpt.model->config();
    if (cfg.cond_input_dim > 0) {
        if (!conditioner) throw ValueError("conditional checkpoint needs a conditioner");
        if (conditioner->dim() != cfg.cond_input_dim)
            throw ShapeError("conditioner dimension " + std::to_string(conditioner->dim()) +
                             " does not match the model's " + std::to_string(cfg.cond_input_dim));
        std::string missing;
        for (const auto& rec : test_manifest.records)
            if (!conditioner->covers(rec.label)) missing += " " + utf8_encode(rec.label);
        if (!missing.empty())
            throw UnknownLabelError("conditioner cannot encode:" + missing);
    }

    const Schedule schedule = ckpt.schedule();

    // One model clone per worker; forward passes mutate activation caches.
    const auto n_chars = test_manifest.records.size();
    const unsigned workers =
        std::min<unsigned>(static_cast<unsigned>(num_threads()), static_cast<unsigned>(n_chars));
    std::vector<std::unique_ptr<UNet>> clones;
    for (unsigned w = 0; w < workers; ++w) {
        auto clone = std::make_unique<UNet>(cfg, 0);
        const auto src = ckpt.model->parameters();
        const auto dst = clone->parameters();
        for (std::size_t i = 0; i < src.size(); ++i) dst[i]->w = src[i]->w;
        clones.push_back(std::move(clone));
    }
    std::atomic<unsigned> next_worker{0};
    thread_local UNet* tl_model = nullptr;

    const SampleFn sampler = [&](char32_t label, int n, Rng& rng) {
        if (!tl_model) tl_model = clones[next_worker.fetch_add(1) % workers].get();
        Matrix cond;
        if (cfg.cond_input_dim > 0) cond = conditioner->condition(label).vector;
        return ancestral_sample(*tl_model, cond, schedule, rng, n);
    };

    // Conditioners memoize per label; warm the cache serially so the worker
    // threads only read it.
    if (cfg.cond_input_dim > 0)
        for (const auto& rec : test_manifest.records) conditioner->condition(rec.label);

    EvalReport report = evaluate_with_sampler(test_manifest.records, base_dir, cfg.resolution,
                                              sampler, n_samples_per_char, seed, grid_out);
    report.provider_tag = to_string(ckpt.provider);
    report.checkpoint_id = ckpt.meta.stage + "/" + std::to_string(ckpt.meta.steps) + " steps";
    return report;
}

// --- comparison report -----------------------------------------------------------

std::vector<ReportRow> paper_citation_rows() {
    return {
        {"zi2zi", 0.5781, "5k+", true},
        {"CalliGAN", 0.6147, "5k+", true},
        {"proposed+r", 0.4651, "157", true},
        {"proposed+t", 0.4710, "157", true},
        {"proposed+f", 0.4690, "157", true},
    };
}

namespace {

std::string format_double(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string trim_copy(const std::string& s) {
    const auto a = s.find_first_not_of(' ');
    const auto b = s.find_last_not_of(' ');
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

}  // namespace

std::string compare_report(const std::vector<ReportRow>& rows) {
    if (rows.empty()) throw ValueError("compare_report needs at least one row");
    std::vector<std::array<std::string, 3>> cells;
    for (const auto& r : rows)
        cells.push_back({r.method + (r.external ? " *" : ""), format_double(r.ssim),
                         r.trainset_size});
    std::array<std::string, 3> header = {"method", "SSIM", "stylized trainingset size"};
    std::array<std::size_t, 3> width = {header[0].size(), header[1].size(), header[2].size()};
    for (const auto& row : cells)
        for (int c = 0; c < 3; ++c) width[static_cast<std::size_t>(c)] =
            std::max(width[static_cast<std::size_t>(c)], row[static_cast<std::size_t>(c)].size());

    const auto pad = [&](const std::string& s, std::size_t w) {
        return s + std::string(w - s.size(), ' ');
    };
    std::string out;
    out += pad(header[0], width[0]) + " | " + pad(header[1], width[1]) + " | " + header[2] + "\n";
    out += std::string(width[0], '-') + "-+-" + std::string(width[1], '-') + "-+-" +
           std::string(width[2], '-') + "\n";
    bool any_external = false;
    for (const auto& row : cells) {
        out += pad(row[0], width[0]) + " | " + pad(row[1], width[1]) + " | " + row[2] + "\n";
        if (row[0].size() >= 2 && row[0].substr(row[0].size() - 1) == "*") any_external = true;
    }
    if (any_external)
        out += "* reported values (zi2zi and CalliGAN rows are directly sourced from the CalliGAN "
               "paper, on its dataset)\n";
    return out;
}

std::vector<ReportRow> parse_compare_report(const std::string& text) {
    std::vector<ReportRow> rows;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no <= 2) continue;  // header and rule
        if (line.empty() || line[0] == '*') break;
        const auto fields = split(line, '|');
        if (fields.size() != 3) throw ParseError("malformed report row: " + line);
        ReportRow row;
        row.method = trim_copy(fields[0]);
        if (row.method.size() >= 2 && row.method.substr(row.method.size() - 2) == " *") {
            row.external = true;
            row.method = row.method.substr(0, row.method.size() - 2);
        }
        const std::string num = trim_copy(fields[1]);
        const auto res = std::from_chars(num.data(), num.data() + num.size(), row.ssim);
        if (res.ec != std::errc()) throw ParseError("bad SSIM value: " + num);
        row.trainset_size = trim_copy(fields[2]);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace calli
