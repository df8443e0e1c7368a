#include <cstdio>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "calli/common.hpp"
#include "calli/conditioners.hpp"
#include "calli/evaluator.hpp"
#include "calli/glyph_corpus.hpp"
#include "calli/page_segmenter.hpp"
#include "calli/parallel.hpp"
#include "calli/stroke_codec.hpp"
#include "calli/stroke_encoder.hpp"
#include "calli/trainer.hpp"

namespace {

using namespace calli;

std::uint64_t resolve_seed(const std::string& seed_str) {
    if (!seed_str.empty()) return std::stoull(seed_str);
    std::random_device rd;
    const std::uint64_t seed =
        (static_cast<std::uint64_t>(rd()) << 32) ^ static_cast<std::uint64_t>(rd());
    std::cout << "seed: " << seed << "\n";
    return seed;
}

std::vector<char32_t> load_labels(const std::string& labels_file, const std::string& chars) {
    std::u32string joined;
    if (!labels_file.empty()) {
        for (char32_t c : utf8_decode(read_text_file(labels_file)))
            if (c != U'\n' && c != U'\r' && c != U' ' && c != U'\t') joined.push_back(c);
    }
    joined += utf8_decode(chars);
    if (joined.empty()) throw ValueError("no characters given (use --labels or --chars)");
    std::vector<char32_t> out(joined.begin(), joined.end());
    return out;
}

RunConfig load_run_config(const std::string& config_path, Stage stage,
                          const std::map<std::string, std::string>& overrides) {
    std::map<std::string, std::string> kv;
    if (!config_path.empty()) kv = parse_config_file(config_path);
    kv["stage"] = to_string(stage);
    for (const auto& [k, v] : overrides)
        if (!v.empty()) kv[k] = v;
    std::vector<std::string> defaulted;
    RunConfig config = run_config_from_map(kv, /*strict=*/false, &defaulted);
    if (!defaulted.empty()) {
        std::cout << "defaults applied:\n";
        for (const auto& d : defaulted) std::cout << "  " << d << "\n";
    }
    config.validate();
    return config;
}

int cmd_render_corpus(const std::string& font, const std::string& labels_file,
                      const std::string& chars, const std::string& out_dir, int resolution,
                      const std::string& style, const std::string& split, bool holdout,
                      bool append) {
    const FontRef ref{font, holdout};
    const Manifest m =
        render_corpus(load_labels(labels_file, chars), ref, resolution, style_from_string(style),
                      split_from_string(split), out_dir, append);
    std::cout << "wrote " << m.size() << " records to " << out_dir << "/manifest.tsv\n";
    return 0;
}

int cmd_segment(const std::string& input, const std::string& out_dir,
                const std::string& threshold, long long min_area, long long max_area,
                int resolution, bool invert_page, bool invert_crops) {
    SegmentOptions opts;
    if (threshold == "auto")
        opts.binarize = BinarizeMode::otsu();
    else
        opts.binarize = BinarizeMode::fixed(std::stoi(threshold));
    opts.binarize.invert = invert_page;
    opts.min_area = min_area;
    opts.max_area = max_area;
    opts.resolution = resolution;
    opts.invert_ink = invert_crops;

    const Image page = read_png_gray(input);
    const std::string page_id = std::filesystem::path(input).stem().string();
    const SegmentationResult result = segment_page(page, opts, out_dir, page_id);
    std::cout << "kept " << result.rois.size() << " regions, rejected " << result.rejected.size()
              << "; crops + manifest.stub.tsv in " << out_dir << "\n";
    return 0;
}

int cmd_build_stroke_db(const std::vector<std::string>& inputs, const std::string& out,
                        bool fold_other) {
    std::vector<StrokeCode> entries;
    for (const auto& path : inputs) {
        const StrokeDictionary d = StrokeDictionary::load(path, fold_other);
        for (const auto& e : d.entries()) entries.push_back(e);
    }
    const StrokeDictionary merged = StrokeDictionary::from_entries(std::move(entries));
    atomic_write_file(out, merged.to_tsv());
    std::cout << "wrote " << merged.size() << " entries to " << out << "\n";
    return 0;
}

int cmd_train_stroke_encoder(const std::string& dict_path, const std::string& out,
                             int steps, const std::string& seed_str, int layers, int heads,
                             int dim, int batch, double lr) {
    const std::uint64_t seed = resolve_seed(seed_str);
    const StrokeDictionary dict = StrokeDictionary::load(dict_path);
    EncoderConfig config;
    config.layers = layers;
    config.heads = heads;
    config.hidden_dim = dim;
    EncoderMeta meta;
    StrokeEncoder model = train_encoder(dict.entries(), config, seed, steps, &meta, batch, lr);
    save_encoder_checkpoint(out, model, meta);
    std::cout << "trained " << steps << " steps, final loss " << meta.final_loss << "; saved to "
              << out << "\n";
    return 0;
}

int cmd_train(Stage stage, const std::string& config_path,
              const std::map<std::string, std::string>& overrides) {
    RunConfig config = load_run_config(config_path, stage, overrides);
    const ModelCheckpoint ckpt =
        stage == Stage::Pretrain ? pretrain(config) : finetune(config);
    const double last = ckpt.meta.loss_curve.empty() ? 0.0 : ckpt.meta.loss_curve.back();
    std::cout << to_string(stage) << " done: " << ckpt.meta.steps << " steps, last loss " << last
              << ", checkpoint at " << config.out_ckpt.string() << "\n";
    return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& chars, const std::string& seed_str,
               const std::string& out, int n_samples,
               const std::map<std::string, std::string>& overrides) {
    const std::uint64_t seed = resolve_seed(seed_str);
    ModelCheckpoint ckpt = load_checkpoint(ckpt_path);
    auto conditioner = conditioner_from_checkpoint(ckpt, overrides);
    const Schedule schedule = ckpt.schedule();
    const std::u32string labels = utf8_decode(chars);
    if (labels.empty()) throw ValueError("no characters given");

    const int res = ckpt.unet_config.resolution;
    const int pad = 2;
    Image grid(n_samples * (res + pad) + pad, static_cast<int>(labels.size()) * (res + pad) + pad,
               0.25);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        Matrix cond;
        if (ckpt.unet_config.cond_input_dim > 0) {
            if (!conditioner) throw ValueError("conditional checkpoint needs a conditioner");
            cond = conditioner->condition(labels[i]).vector;
        }
        Rng rng = Rng::derive(seed, i);
        const Matrix samples = ancestral_sample(*ckpt.model, cond, schedule, rng, n_samples);
        for (int s = 0; s < n_samples; ++s) {
            const int ox = pad + s * (res + pad);
            const int oy = pad + static_cast<int>(i) * (res + pad);
            for (int y = 0; y < res; ++y)
                for (int x = 0; x < res; ++x)
                    grid.at(ox + x, oy + y) =
                        (samples(static_cast<Eigen::Index>(y) * res + x, s) + 1.0) / 2.0;
        }
    }
    write_png_gray(out, grid);
    std::cout << "wrote " << out << "\n";
    return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& manifest_path,
                 const std::string& seed_str, const std::string& out, const std::string& grid,
                 int n_samples, const std::map<std::string, std::string>& overrides) {
    const std::uint64_t seed = resolve_seed(seed_str);
    ModelCheckpoint ckpt = load_checkpoint(ckpt_path);
    auto conditioner = conditioner_from_checkpoint(ckpt, overrides);
    const Manifest manifest = Manifest::load(manifest_path);
    const auto base_dir = std::filesystem::path(manifest_path).parent_path();

    std::filesystem::path grid_path = grid;
    if (grid_path.empty() && !out.empty())
        grid_path = std::filesystem::path(out).replace_extension(".grid.png");
    const EvalReport report = evaluate_model(ckpt, manifest, base_dir, conditioner.get(),
                                             n_samples, seed, grid_path);

    std::vector<ReportRow> rows;
    rows.push_back({"this-run (" + report.provider_tag + ", " + report.checkpoint_id + ")",
                    report.mean_ssim, std::to_string(manifest.size()), false});
    for (auto& r : paper_citation_rows()) rows.push_back(r);
    std::string text = compare_report(rows);
    text += "\nper-character mean SSIM:\n";
    for (const auto& ce : report.per_character) {
        char line[64];
        std::snprintf(line, sizeof(line), "  %s\t%.6f\n", utf8_encode(ce.label).c_str(),
                      ce.mean_ssim);
        text += line;
    }
    if (!out.empty()) {
        atomic_write_file(out, text);
        std::cout << "mean SSIM " << report.mean_ssim << "; report at " << out << "\n";
    } else {
        std::cout << text;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Few-shot calligraphy generation toolkit"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker threads (0 = auto)");

    // render-corpus
    auto* rc = app.add_subcommand("render-corpus", "Render glyph images from a font file");
    std::string rc_font, rc_labels, rc_chars, rc_out, rc_style = "regular", rc_split = "pretrain";
    int rc_res = 64;
    bool rc_holdout = false, rc_append = false;
    rc->add_option("--font", rc_font, "Vector font file")->required();
    rc->add_option("--labels", rc_labels, "File listing characters to render");
    rc->add_option("--chars", rc_chars, "Characters to render, inline");
    rc->add_option("--out", rc_out, "Output directory")->required();
    rc->add_option("--resolution", rc_res, "Canvas size in pixels");
    rc->add_option("--style", rc_style, "regular|semicursive|clerical");
    rc->add_option("--split", rc_split, "pretrain|finetune-train|finetune-test");
    rc->add_flag("--holdout", rc_holdout, "Treat the font as conditioning-only");
    rc->add_flag("--append", rc_append, "Append to an existing manifest");

    // segment
    auto* sg = app.add_subcommand("segment", "Extract character crops from a scanned page");
    std::string sg_in, sg_out, sg_threshold = "auto";
    long long sg_min = 0, sg_max = -1;
    int sg_res = 64;
    bool sg_invert_page = false, sg_invert_crops = false;
    sg->add_option("--input", sg_in, "Scanned page PNG")->required();
    sg->add_option("--out", sg_out, "Output directory")->required();
    sg->add_option("--threshold", sg_threshold, "auto or a byte threshold 0-255");
    sg->add_option("--min-area", sg_min, "Minimum ROI area in px^2");
    sg->add_option("--max-area", sg_max, "Maximum ROI area in px^2 (-1 = page area)");
    sg->add_option("--resolution", sg_res, "Crop output size");
    sg->add_flag("--invert", sg_invert_page, "Page has light ink on dark background");
    sg->add_flag("--invert-crops", sg_invert_crops, "Invert crops so exported ink is bright");

    // build-stroke-db
    auto* db = app.add_subcommand("build-stroke-db", "Validate and merge stroke dictionaries");
    std::vector<std::string> db_in;
    std::string db_out;
    bool db_nofold = false;
    db->add_option("--in", db_in, "Input dictionary files")->required();
    db->add_option("--out", db_out, "Canonical merged output")->required();
    db->add_flag("--no-fold-other", db_nofold, "Reject stroke classes beyond 1-5 instead of folding into 5");

    // train-stroke-encoder
    auto* te = app.add_subcommand("train-stroke-encoder", "Train the stroke sequence encoder");
    std::string te_dict, te_out, te_seed;
    int te_steps = 2000, te_layers = 4, te_heads = 4, te_dim = 128, te_batch = 8;
    double te_lr = 3e-4;
    te->add_option("--dict", te_dict, "Stroke dictionary")->required();
    te->add_option("--out", te_out, "Checkpoint path")->required();
    te->add_option("--steps", te_steps, "Training steps");
    te->add_option("--seed", te_seed, "RNG seed (random if omitted)");
    te->add_option("--layers", te_layers, "Transformer layers");
    te->add_option("--heads", te_heads, "Attention heads");
    te->add_option("--dim", te_dim, "Hidden dimension");
    te->add_option("--batch", te_batch, "Batch size");
    te->add_option("--lr", te_lr, "Learning rate");

    // pretrain / finetune share override flags
    const auto add_train_flags = [](CLI::App* cmd, std::string& config_path,
                                    std::map<std::string, std::string>& ov) {
        cmd->add_option("--config", config_path, "Flat key=value config file");
        for (const char* key : {"manifest", "conditioner", "font_path", "stroke_dict",
                                "stroke_ckpt", "out_ckpt", "init_ckpt", "loss_log", "steps",
                                "seed", "lr", "batch_size", "resolution", "base_channels",
                                "channel_multipliers", "res_blocks", "timesteps"})
            cmd->add_option("--" + std::string(key), ov[key], "Overrides config key " + std::string(key));
    };
    auto* pt = app.add_subcommand("pretrain", "Train from scratch on the pretrain split");
    std::string pt_config;
    std::map<std::string, std::string> pt_ov;
    add_train_flags(pt, pt_config, pt_ov);
    auto* ft = app.add_subcommand("finetune", "Continue training on the finetune-train split");
    std::string ft_config;
    std::map<std::string, std::string> ft_ov;
    add_train_flags(ft, ft_config, ft_ov);
    std::string ft_init;
    ft->add_option("--init", ft_init, "Init checkpoint (alias for --init_ckpt)");

    // sample
    auto* sp = app.add_subcommand("sample", "Generate a character grid from a checkpoint");
    std::string sp_ckpt, sp_chars, sp_seed, sp_out, sp_font, sp_sdict, sp_sckpt;
    int sp_n = 4;
    sp->add_option("--ckpt", sp_ckpt, "Model checkpoint")->required();
    sp->add_option("--chars", sp_chars, "Characters to generate")->required();
    sp->add_option("--seed", sp_seed, "RNG seed (random if omitted)");
    sp->add_option("--out", sp_out, "Output PNG")->required();
    sp->add_option("--n", sp_n, "Samples per character");
    sp->add_option("--font", sp_font, "Override the holdout font path");
    sp->add_option("--stroke-dict", sp_sdict, "Override the stroke dictionary path");
    sp->add_option("--stroke-ckpt", sp_sckpt, "Override the stroke encoder path");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Score a checkpoint against a test manifest");
    std::string ev_ckpt, ev_manifest, ev_seed, ev_out, ev_grid, ev_font, ev_sdict, ev_sckpt;
    int ev_n = 4;
    ev->add_option("--ckpt", ev_ckpt, "Model checkpoint")->required();
    ev->add_option("--manifest", ev_manifest, "Test manifest")->required();
    ev->add_option("--seed", ev_seed, "RNG seed (random if omitted)");
    ev->add_option("--out", ev_out, "Report path (stdout if omitted)");
    ev->add_option("--grid", ev_grid, "Sample grid PNG path");
    ev->add_option("--n", ev_n, "Samples per character");
    ev->add_option("--font", ev_font, "Override the holdout font path");
    ev->add_option("--stroke-dict", ev_sdict, "Override the stroke dictionary path");
    ev->add_option("--stroke-ckpt", ev_sckpt, "Override the stroke encoder path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (threads > 0) calli::set_num_threads(threads);
        if (rc->parsed())
            return cmd_render_corpus(rc_font, rc_labels, rc_chars, rc_out, rc_res, rc_style,
                                     rc_split, rc_holdout, rc_append);
        if (sg->parsed())
            return cmd_segment(sg_in, sg_out, sg_threshold, sg_min, sg_max, sg_res,
                               sg_invert_page, sg_invert_crops);
        if (db->parsed()) return cmd_build_stroke_db(db_in, db_out, !db_nofold);
        if (te->parsed())
            return cmd_train_stroke_encoder(te_dict, te_out, te_steps, te_seed, te_layers,
                                            te_heads, te_dim, te_batch, te_lr);
        if (pt->parsed()) {
            if (pt_ov["seed"].empty()) pt_ov["seed"] = std::to_string(resolve_seed(""));
            return cmd_train(Stage::Pretrain, pt_config, pt_ov);
        }
        if (ft->parsed()) {
            if (!ft_init.empty()) ft_ov["init_ckpt"] = ft_init;
            if (ft_ov["seed"].empty()) ft_ov["seed"] = std::to_string(resolve_seed(""));
            return cmd_train(Stage::Finetune, ft_config, ft_ov);
        }
        if (sp->parsed()) {
            std::map<std::string, std::string> ov;
            if (!sp_font.empty()) ov["font"] = sp_font;
            if (!sp_sdict.empty()) ov["stroke_dict"] = sp_sdict;
            if (!sp_sckpt.empty()) ov["stroke_ckpt"] = sp_sckpt;
            return cmd_sample(sp_ckpt, sp_chars, sp_seed, sp_out, sp_n, ov);
        }
        if (ev->parsed()) {
            std::map<std::string, std::string> ov;
            if (!ev_font.empty()) ov["font"] = ev_font;
            if (!ev_sdict.empty()) ov["stroke_dict"] = ev_sdict;
            if (!ev_sckpt.empty()) ov["stroke_ckpt"] = ev_sckpt;
            return cmd_evaluate(ev_ckpt, ev_manifest, ev_seed, ev_out, ev_grid, ev_n, ov);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
