#include "calli/conditioners.hpp"

#include "calli/common.hpp"

namespace calli {

std::string to_string(ProviderKind k) {
    switch (k) {
        case ProviderKind::None: return "none";
        case ProviderKind::Naive: return "naive";
        case ProviderKind::Font: return "font";
        case ProviderKind::Stroke: return "stroke";
    }
    throw ValueError("bad provider kind");
}

ProviderKind provider_from_string(const std::string& s) {
    if (s == "none") return ProviderKind::None;
    if (s == "naive") return ProviderKind::Naive;
    if (s == "font") return ProviderKind::Font;
    if (s == "stroke") return ProviderKind::Stroke;
    throw ParseError("unknown conditioner: \"" + s + "\" (expected naive|font|stroke|none)");
}

NaiveTable::NaiveTable(std::vector<char32_t> labels, int dim, std::uint64_t seed)
    : labels_(std::move(labels)) {
    if (labels_.empty()) throw ValueError("naive table needs at least one label");
    if (dim < 1) throw ValueError("naive table dimension must be positive");
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (!index_.emplace(labels_[i], i).second)
            throw ValueError("duplicate label in naive table: " + utf8_encode(labels_[i]));
    }
    rows_ = nn::Param("naive_table", dim, static_cast<Eigen::Index>(labels_.size()));
    Rng rng(seed);
    nn::init_gaussian(rows_, rng, 1.0);  // standard Gaussian rows
}

std::size_t NaiveTable::index_of(char32_t label) const {
    const auto it = index_.find(label);
    if (it == index_.end())
        throw UnknownLabelError("label not in naive table: " + utf8_encode(label));
    return it->second;
}

Vector NaiveTable::row(char32_t label) const {
    return rows_.w.col(static_cast<Eigen::Index>(index_of(label)));
}

Matrix Conditioner::condition_batch(std::span<const char32_t> labels) {
    Matrix out(dim(), static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i)
        out.col(static_cast<Eigen::Index>(i)) = condition(labels[i]).vector;
    return out;
}

ConditionEmbedding NaiveConditioner::condition(char32_t label) {
    return {table_.row(label), ProviderKind::Naive, label};
}

void NaiveConditioner::accumulate_grad(std::span<const char32_t> labels, const Matrix& dcond) {
    if (dcond.cols() != static_cast<Eigen::Index>(labels.size()) ||
        dcond.rows() != table_.dim())
        throw ShapeError("condition gradient shape mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i)
        table_.param().g.col(static_cast<Eigen::Index>(table_.index_of(labels[i]))) +=
            dcond.col(static_cast<Eigen::Index>(i));
}

FontConditioner::FontConditioner(const FontRef& font, int resolution)
    : font_(VectorFont::load(font.font_file_path)), resolution_(resolution) {
    if (resolution < 1) throw ValueError("conditioner resolution must be positive");
    if (!font.holdout_flag && !font_.holdout)
        throw ValueError("font conditioning requires a holdout font; '" + font_.name +
                         "' is not marked holdout");
}

ConditionEmbedding FontConditioner::condition(char32_t label) {
    auto it = cache_.find(label);
    if (it == cache_.end()) {
        const GlyphImage g = render_glyph(label, font_, resolution_);
        Vector v(static_cast<Eigen::Index>(g.pixels.size()));
        for (std::size_t i = 0; i < g.pixels.size(); ++i)
            v(static_cast<Eigen::Index>(i)) = (g.pixels[i] + 1.0) / 2.0;  // remap to [0, 1]
        it = cache_.emplace(label, std::move(v)).first;
    }
    return {it->second, ProviderKind::Font, label};
}

StrokeConditioner::StrokeConditioner(StrokeDictionary dict, std::shared_ptr<StrokeEncoder> encoder)
    : dict_(std::move(dict)), encoder_(std::move(encoder)) {
    if (!encoder_) throw ValueError("stroke conditioner needs an encoder");
    if (encoder_->config().hidden_dim != 128)
        throw ValueError("stroke condition embedding must be 128-dimensional, encoder has " +
                         std::to_string(encoder_->config().hidden_dim));
}

ConditionEmbedding StrokeConditioner::condition(char32_t label) {
    auto it = cache_.find(label);
    if (it == cache_.end()) {
        const StrokeCode code = encode_character(label, dict_);
        it = cache_.emplace(label, encoder_->embed(code)).first;
    }
    return {it->second, ProviderKind::Stroke, label};
}

ConditionEmbedding naive_condition(NaiveTable& table, char32_t label) {
    return {table.row(label), ProviderKind::Naive, label};
}

ConditionEmbedding font_condition(char32_t label, const FontRef& holdout_font, int resolution) {
    FontConditioner provider(holdout_font, resolution);
    return provider.condition(label);
}

ConditionEmbedding stroke_condition(char32_t label, const StrokeDictionary& dict,
                                    StrokeEncoder& encoder) {
    const StrokeCode code = encode_character(label, dict);
    return {encoder.embed(code), ProviderKind::Stroke, label};
}

}  // namespace calli
