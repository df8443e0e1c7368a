#include "calli/trainer.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "calli/common.hpp"

namespace calli {

std::string to_string(Stage s) {
    return s == Stage::Pretrain ? "pretrain" : "finetune";
}

int RunConfig::cond_dim() const {
    switch (conditioner) {
        case ProviderKind::None: return 0;
        case ProviderKind::Naive: return naive_dim;
        case ProviderKind::Font: {
            const int r = font_cond_resolution > 0 ? font_cond_resolution : unet.resolution;
            return r * r;
        }
        case ProviderKind::Stroke: return 128;
    }
    throw ValueError("bad provider kind");
}

void RunConfig::validate() const {
    if (manifest.empty()) throw ValueError("config: manifest path required");
    if (out_ckpt.empty()) throw ValueError("config: out_ckpt path required");
    if (stage == Stage::Finetune && init_ckpt.empty())
        throw ValueError("config: finetune requires init_ckpt");
    if (steps < 0) throw ValueError("config: steps must be >= 0");
    if (batch_size < 1) throw ValueError("config: batch_size must be >= 1");
    if (!(lr > 0)) throw ValueError("config: lr must be positive");
    if (conditioner == ProviderKind::Font && font_path.empty())
        throw ValueError("config: font conditioner requires font_path");
    if (conditioner == ProviderKind::Stroke && (stroke_dict.empty() || stroke_ckpt.empty()))
        throw ValueError("config: stroke conditioner requires stroke_dict and stroke_ckpt");
    if (conditioner == ProviderKind::Naive && naive_dim < 1)
        throw ValueError("config: naive_dim must be positive");
    make_schedule(timesteps, beta_start, beta_end);  // range-checks the schedule
    UNetConfig probe = unet;
    probe.cond_input_dim = cond_dim();
    probe.validate();
}

// --- config files ---------------------------------------------------------------

std::map<std::string, std::string> parse_config_file(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    std::istringstream in(text);
    std::map<std::string, std::string> kv;
    std::string line;
    int line_no = 0;
    const auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++line_no;
        const std::string stripped = trim(line);
        if (stripped.empty() || stripped[0] == '#') continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ParseError(path.string() + ":" + std::to_string(line_no) +
                             ": expected `key = value`");
        const std::string key = trim(stripped.substr(0, eq));
        const std::string value = trim(stripped.substr(eq + 1));
        if (key.empty())
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": empty key");
        if (!kv.emplace(key, value).second)
            throw ParseError(path.string() + ":" + std::to_string(line_no) + ": duplicate key `" +
                             key + "`");
    }
    return kv;
}

std::vector<std::string> run_config_keys() {
    return {"stage",      "manifest",     "conditioner", "font_path",
            "stroke_dict", "stroke_ckpt", "naive_dim",   "font_cond_resolution",
            "timesteps",  "beta_start",   "beta_end",    "resolution",
            "base_channels", "channel_multipliers", "res_blocks", "time_embed_dim",
            "norm_groups", "lr",          "batch_size",  "steps",
            "seed",       "init_ckpt",    "out_ckpt",    "loss_log"};
}

namespace {

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    for (const auto& piece : split(s, ',')) {
        if (piece.empty()) throw ParseError("empty entry in integer list \"" + s + "\"");
        out.push_back(std::stoi(piece));
    }
    return out;
}

}  // namespace

RunConfig run_config_from_map(const std::map<std::string, std::string>& kv, bool strict,
                              std::vector<std::string>* defaulted) {
    for (const auto& [key, value] : kv) {
        const auto keys = run_config_keys();
        if (std::find(keys.begin(), keys.end(), key) == keys.end())
            throw ParseError("unknown config key `" + key + "`");
        (void)value;
    }
    RunConfig c;
    const auto fetch = [&](const std::string& key, const std::string& fallback,
                           bool required_when_strict = true) {
        const auto it = kv.find(key);
        if (it != kv.end()) return it->second;
        if (strict && required_when_strict)
            throw ParseError("config key `" + key + "` is required");
        if (defaulted) defaulted->push_back(key + " = " + fallback);
        return fallback;
    };

    const std::string stage = fetch("stage", "pretrain");
    if (stage == "pretrain")
        c.stage = Stage::Pretrain;
    else if (stage == "finetune")
        c.stage = Stage::Finetune;
    else
        throw ParseError("stage must be pretrain or finetune, got \"" + stage + "\"");

    c.manifest = fetch("manifest", "");
    c.conditioner = provider_from_string(fetch("conditioner", "naive"));
    const bool need_font = c.conditioner == ProviderKind::Font;
    const bool need_stroke = c.conditioner == ProviderKind::Stroke;
    c.font_path = fetch("font_path", "", need_font);
    c.stroke_dict = fetch("stroke_dict", "", need_stroke);
    c.stroke_ckpt = fetch("stroke_ckpt", "", need_stroke);
    c.naive_dim = std::stoi(fetch("naive_dim", "128", c.conditioner == ProviderKind::Naive));
    c.font_cond_resolution = std::stoi(fetch("font_cond_resolution", "0", false));
    c.timesteps = std::stoi(fetch("timesteps", "1000"));
    c.beta_start = std::stod(fetch("beta_start", "0.0001"));
    c.beta_end = std::stod(fetch("beta_end", "0.02"));
    c.unet.resolution = std::stoi(fetch("resolution", "64"));
    c.unet.base_channels = std::stoi(fetch("base_channels", "32"));
    c.unet.channel_multipliers = parse_int_list(fetch("channel_multipliers", "1,2,4"));
    c.unet.res_blocks = std::stoi(fetch("res_blocks", "2"));
    c.unet.time_embed_dim = std::stoi(fetch("time_embed_dim", "128"));
    c.unet.norm_groups = std::stoi(fetch("norm_groups", "8"));
    c.lr = std::stod(fetch("lr", c.stage == Stage::Pretrain ? "0.0001" : "0.00001"));
    c.batch_size = std::stoi(fetch("batch_size", "16"));
    c.steps = std::stoi(fetch("steps", "1000"));
    c.seed = static_cast<std::uint64_t>(std::stoull(fetch("seed", "0")));
    c.init_ckpt = fetch("init_ckpt", "", c.stage == Stage::Finetune);
    c.out_ckpt = fetch("out_ckpt", "");
    c.loss_log = fetch("loss_log", "", false);
    return c;
}

std::string run_config_to_text(const RunConfig& c) {
    std::ostringstream out;
    out << "stage = " << to_string(c.stage) << "\n";
    out << "manifest = " << c.manifest.string() << "\n";
    out << "conditioner = " << to_string(c.conditioner) << "\n";
    out << "font_path = " << c.font_path.string() << "\n";
    out << "stroke_dict = " << c.stroke_dict.string() << "\n";
    out << "stroke_ckpt = " << c.stroke_ckpt.string() << "\n";
    out << "naive_dim = " << c.naive_dim << "\n";
    out << "font_cond_resolution = " << c.font_cond_resolution << "\n";
    out << "timesteps = " << c.timesteps << "\n";
    out << "beta_start = " << c.beta_start << "\n";
    out << "beta_end = " << c.beta_end << "\n";
    out << "resolution = " << c.unet.resolution << "\n";
    out << "base_channels = " << c.unet.base_channels << "\n";
    out << "channel_multipliers = ";
    for (std::size_t i = 0; i < c.unet.channel_multipliers.size(); ++i)
        out << (i ? "," : "") << c.unet.channel_multipliers[i];
    out << "\n";
    out << "res_blocks = " << c.unet.res_blocks << "\n";
    out << "time_embed_dim = " << c.unet.time_embed_dim << "\n";
    out << "norm_groups = " << c.unet.norm_groups << "\n";
    out << "lr = " << c.lr << "\n";
    out << "batch_size = " << c.batch_size << "\n";
    out << "steps = " << c.steps << "\n";
    out << "seed = " << c.seed << "\n";
    out << "init_ckpt = " << c.init_ckpt.string() << "\n";
    out << "out_ckpt = " << c.out_ckpt.string() << "\n";
    out << "loss_log = " << c.loss_log.string() << "\n";
    return out.str();
}

// --- corpus loading ---------------------------------------------------------------

TrainingSet load_training_set(const Manifest& manifest, const std::filesystem::path& base_dir,
                              int resolution, SplitTag split) {
    std::vector<const ManifestRecord*> records;
    for (const auto& r : manifest.records)
        if (r.split == split) records.push_back(&r);
    if (records.empty())
        throw ValueError("manifest has no records with split " + to_string(split));

    TrainingSet ts;
    ts.x0.resize(static_cast<Eigen::Index>(resolution) * resolution,
                 static_cast<Eigen::Index>(records.size()));
    ts.labels.reserve(records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        const GlyphImage g = load_glyph_image(base_dir / records[i]->image_path, *records[i],
                                              resolution);
        for (std::size_t p = 0; p < g.pixels.size(); ++p)
            ts.x0(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(i)) = g.pixels[p];
        ts.labels.push_back(records[i]->label);
    }
    return ts;
}

// --- conditioner factories ----------------------------------------------------------

std::unique_ptr<Conditioner> make_conditioner(const RunConfig& config,
                                              const std::vector<char32_t>& labels) {
    switch (config.conditioner) {
        case ProviderKind::None:
            return nullptr;
        case ProviderKind::Naive: {
            std::set<char32_t> uniq(labels.begin(), labels.end());
            return std::make_unique<NaiveConditioner>(
                std::vector<char32_t>(uniq.begin(), uniq.end()), config.naive_dim,
                config.seed ^ 0x7ab1eull);
        }
        case ProviderKind::Font: {
            const int res = config.font_cond_resolution > 0 ? config.font_cond_resolution
                                                            : config.unet.resolution;
            return std::make_unique<FontConditioner>(FontRef{config.font_path, true}, res);
        }
        case ProviderKind::Stroke: {
            auto loaded = load_encoder_checkpoint(config.stroke_ckpt);
            return std::make_unique<StrokeConditioner>(
                StrokeDictionary::load(config.stroke_dict),
                std::shared_ptr<StrokeEncoder>(std::move(loaded.model)));
        }
    }
    throw ValueError("bad provider kind");
}

std::unique_ptr<Conditioner> conditioner_from_checkpoint(
    ModelCheckpoint& ckpt, const std::map<std::string, std::string>& overrides) {
    const auto pick = [&](const char* key, const std::string& stored) {
        const auto it = overrides.find(key);
        return it != overrides.end() ? it->second : stored;
    };
    switch (ckpt.provider) {
        case ProviderKind::None:
            return nullptr;
        case ProviderKind::Naive:
            if (!ckpt.naive) throw CorruptFileError("checkpoint lacks its naive table");
            return std::make_unique<NaiveConditioner>(*ckpt.naive);
        case ProviderKind::Font: {
            const std::string path = pick("font", ckpt.font_path);
            if (path.empty()) throw ValueError("checkpoint has no font path; pass one explicitly");
            return std::make_unique<FontConditioner>(FontRef{path, true},
                                                     ckpt.font_cond_resolution);
        }
        case ProviderKind::Stroke: {
            const std::string dict = pick("stroke_dict", ckpt.stroke_dict);
            const std::string enc = pick("stroke_ckpt", ckpt.stroke_ckpt);
            if (dict.empty() || enc.empty())
                throw ValueError("checkpoint lacks stroke provider paths; pass them explicitly");
            auto loaded = load_encoder_checkpoint(enc);
            return std::make_unique<StrokeConditioner>(
                StrokeDictionary::load(dict),
                std::shared_ptr<StrokeEncoder>(std::move(loaded.model)));
        }
    }
    throw ValueError("bad provider kind");
}

// --- training ------------------------------------------------------------------------

nn::ParamList ModelCheckpoint::all_parameters() {
    nn::ParamList params = model->parameters();
    if (naive) params.push_back(&naive->param());
    return params;
}

namespace {

ModelCheckpoint train_run(const RunConfig& config, ModelCheckpoint* init) {
    config.validate();
    const Manifest manifest = Manifest::load(config.manifest);
    const auto base_dir = config.manifest.parent_path();
    const SplitTag split =
        config.stage == Stage::Pretrain ? SplitTag::Pretrain : SplitTag::FinetuneTrain;
    const TrainingSet ts = load_training_set(manifest, base_dir, config.unet.resolution, split);

    // the naive table covers every label in the manifest, not only this split
    std::vector<char32_t> all_labels;
    for (const auto& r : manifest.records) all_labels.push_back(r.label);

    UNetConfig unet_config = config.unet;
    unet_config.cond_input_dim = config.cond_dim();

    ModelCheckpoint out;
    out.unet_config = unet_config;
    out.timesteps = config.timesteps;
    out.beta_start = config.beta_start;
    out.beta_end = config.beta_end;
    out.provider = config.conditioner;
    out.font_path = config.font_path.string();
    out.stroke_dict = config.stroke_dict.string();
    out.stroke_ckpt = config.stroke_ckpt.string();
    out.font_cond_resolution = config.font_cond_resolution > 0 ? config.font_cond_resolution
                                                               : config.unet.resolution;

    std::unique_ptr<Conditioner> conditioner;
    if (config.stage == Stage::Pretrain) {
        out.model = std::make_unique<UNet>(unet_config, config.seed);
        conditioner = make_conditioner(config, all_labels);
    } else {
        if (!init) throw ValueError("finetune requires an init checkpoint");
        if (init->provider != config.conditioner)
            throw ValueError("init checkpoint incompatible: conditioner differs (" +
                             to_string(init->provider) + " vs " + to_string(config.conditioner) +
                             ")");
        if (const auto field = config_mismatch(init->unet_config, unet_config))
            throw ValueError("init checkpoint incompatible: " + *field + " differs");
        if (init->timesteps != config.timesteps || init->beta_start != config.beta_start ||
            init->beta_end != config.beta_end)
            throw ValueError("init checkpoint incompatible: schedule differs");
        out.model = std::move(init->model);
        out.meta.init_provenance = config.init_ckpt.string();
        if (config.conditioner == ProviderKind::Naive) {
            if (!init->naive) throw CorruptFileError("init checkpoint lacks its naive table");
            conditioner = std::make_unique<NaiveConditioner>(std::move(*init->naive));
            init->naive.reset();
        } else {
            conditioner = make_conditioner(config, all_labels);
        }
    }

    const Schedule schedule = out.schedule();
    nn::ParamList params = out.model->parameters();
    if (conditioner)
        for (auto* p : conditioner->trainable()) params.push_back(p);

    nn::Adam opt({config.lr, 0.9, 0.999, 1e-8});
    Rng rng(config.seed + 0x9E3779B9ull);
    const bool trainable_cond = conditioner && !conditioner->trainable().empty();

    out.meta.stage = to_string(config.stage);
    out.meta.steps = static_cast<std::uint64_t>(config.steps);

    const auto n = static_cast<std::int64_t>(ts.labels.size());
    const int bs = std::min<int>(config.batch_size, static_cast<int>(n));
    DiffusionBatch batch;
    std::vector<char32_t> batch_labels(static_cast<std::size_t>(bs));
    Matrix dcond;

    for (int step = 0; step < config.steps; ++step) {
        batch.x0.resize(ts.x0.rows(), bs);
        for (int i = 0; i < bs; ++i) {
            const auto idx = rng.uniform_int(0, n - 1);
            batch.x0.col(i) = ts.x0.col(static_cast<Eigen::Index>(idx));
            batch_labels[static_cast<std::size_t>(i)] = ts.labels[static_cast<std::size_t>(idx)];
        }
        if (conditioner) batch.cond = conditioner->condition_batch(batch_labels);

        nn::zero_grads(params);
        const double loss = training_loss(*out.model, batch, schedule, rng,
                                          trainable_cond ? &dcond : nullptr);
        if (trainable_cond) conditioner->accumulate_grad(batch_labels, dcond);
        opt.step(params);
        out.meta.loss_curve.push_back(loss);
    }

    if (config.conditioner == ProviderKind::Naive) {
        auto* naive = dynamic_cast<NaiveConditioner*>(conditioner.get());
        out.naive = std::make_unique<NaiveTable>(std::move(naive->table()));
    }

    if (!config.loss_log.empty()) {
        std::string log;
        for (std::size_t i = 0; i < out.meta.loss_curve.size(); ++i) {
            char line[64];
            std::snprintf(line, sizeof(line), "%zu\t%.17g\n", i,
                          out.meta.loss_curve[i]);
            log += line;
        }
        atomic_write_file(config.loss_log, log);
    }
    if (!config.out_ckpt.empty()) save_checkpoint(out, config.out_ckpt);
    return out;
}

}  // namespace

ModelCheckpoint pretrain(const RunConfig& config) {
    if (config.stage != Stage::Pretrain) throw ValueError("pretrain called with a finetune config");
    return train_run(config, nullptr);
}

ModelCheckpoint finetune(const RunConfig& config) {
    if (config.stage != Stage::Finetune) throw ValueError("finetune called with a pretrain config");
    ModelCheckpoint init = load_checkpoint(config.init_ckpt);
    return train_run(config, &init);
}

// --- checkpoint I/O ---------------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'C', 'D', 'M', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw CorruptFileError("model checkpoint truncated");
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put(out, static_cast<std::uint64_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
    const auto len = get<std::uint64_t>(in);
    std::string s(len, '\0');
    in.read(s.data(), static_cast<std::streamsize>(len));
    if (!in) throw CorruptFileError("model checkpoint truncated");
    return s;
}
}  // namespace

void save_checkpoint(const ModelCheckpoint& ckpt, const std::filesystem::path& path) {
    if (!ckpt.model) throw ValueError("cannot save a checkpoint without a model");
    std::ostringstream out(std::ios::binary);
    out.write(kMagic, 4);
    put(out, kVersion);
    const auto& u = ckpt.unet_config;
    put(out, static_cast<std::int32_t>(u.in_channels));
    put(out, static_cast<std::int32_t>(u.base_channels));
    put(out, static_cast<std::uint64_t>(u.channel_multipliers.size()));
    for (int m : u.channel_multipliers) put(out, static_cast<std::int32_t>(m));
    put(out, static_cast<std::int32_t>(u.res_blocks));
    put(out, static_cast<std::int32_t>(u.time_embed_dim));
    put(out, static_cast<std::int32_t>(u.cond_input_dim));
    put(out, static_cast<std::int32_t>(u.resolution));
    put(out, static_cast<std::int32_t>(u.norm_groups));
    put(out, static_cast<std::int32_t>(ckpt.timesteps));
    put(out, ckpt.beta_start);
    put(out, ckpt.beta_end);
    put(out, static_cast<std::uint8_t>(ckpt.provider));
    put_string(out, ckpt.font_path);
    put_string(out, ckpt.stroke_dict);
    put_string(out, ckpt.stroke_ckpt);
    put(out, static_cast<std::int32_t>(ckpt.font_cond_resolution));

    put(out, static_cast<std::uint8_t>(ckpt.naive ? 1 : 0));
    if (ckpt.naive) {
        put(out, static_cast<std::int32_t>(ckpt.naive->dim()));
        put(out, static_cast<std::uint64_t>(ckpt.naive->label_count()));
        for (char32_t c : ckpt.naive->labels()) put(out, static_cast<std::uint32_t>(c));
        const auto& rows = ckpt.naive->param().w;
        out.write(reinterpret_cast<const char*>(rows.data()),
                  static_cast<std::streamsize>(sizeof(double) * rows.size()));
    }

    put_string(out, ckpt.meta.stage);
    put(out, ckpt.meta.steps);
    put_string(out, ckpt.meta.init_provenance);
    put(out, static_cast<std::uint64_t>(ckpt.meta.loss_curve.size()));
    out.write(reinterpret_cast<const char*>(ckpt.meta.loss_curve.data()),
              static_cast<std::streamsize>(sizeof(double) * ckpt.meta.loss_curve.size()));

    nn::write_params(out, ckpt.model->parameters());
    atomic_write_file(path, out.str());
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw CorruptFileError(path.string() + " is not a model checkpoint");
    const auto version = get<std::uint32_t>(in);
    if (version != kVersion)
        throw VersionError(path.string() + ": unsupported checkpoint version " +
                           std::to_string(version));

    ModelCheckpoint ckpt;
    auto& u = ckpt.unet_config;
    u.in_channels = get<std::int32_t>(in);
    u.base_channels = get<std::int32_t>(in);
    const auto n_mults = get<std::uint64_t>(in);
    u.channel_multipliers.clear();
    for (std::uint64_t i = 0; i < n_mults; ++i) u.channel_multipliers.push_back(get<std::int32_t>(in));
    u.res_blocks = get<std::int32_t>(in);
    u.time_embed_dim = get<std::int32_t>(in);
    u.cond_input_dim = get<std::int32_t>(in);
    u.resolution = get<std::int32_t>(in);
    u.norm_groups = get<std::int32_t>(in);
    ckpt.timesteps = get<std::int32_t>(in);
    ckpt.beta_start = get<double>(in);
    ckpt.beta_end = get<double>(in);
    ckpt.provider = static_cast<ProviderKind>(get<std::uint8_t>(in));
    ckpt.font_path = get_string(in);
    ckpt.stroke_dict = get_string(in);
    ckpt.stroke_ckpt = get_string(in);
    ckpt.font_cond_resolution = get<std::int32_t>(in);

    if (get<std::uint8_t>(in) == 1) {
        const auto dim = get<std::int32_t>(in);
        const auto n = get<std::uint64_t>(in);
        std::vector<char32_t> labels;
        labels.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i)
            labels.push_back(static_cast<char32_t>(get<std::uint32_t>(in)));
        ckpt.naive = std::make_unique<NaiveTable>(labels, dim, 0);
        auto& rows = ckpt.naive->param().w;
        in.read(reinterpret_cast<char*>(rows.data()),
                static_cast<std::streamsize>(sizeof(double) * rows.size()));
        if (!in) throw CorruptFileError("model checkpoint truncated");
    }

    ckpt.meta.stage = get_string(in);
    ckpt.meta.steps = get<std::uint64_t>(in);
    ckpt.meta.init_provenance = get_string(in);
    const auto curve_len = get<std::uint64_t>(in);
    ckpt.meta.loss_curve.resize(curve_len);
    in.read(reinterpret_cast<char*>(ckpt.meta.loss_curve.data()),
            static_cast<std::streamsize>(sizeof(double) * curve_len));
    if (!in) throw CorruptFileError("model checkpoint truncated");

    ckpt.model = std::make_unique<UNet>(u, 0);
    nn::read_params(in, ckpt.model->parameters());
    return ckpt;
}

}  // namespace calli
