#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "calli/glyph_corpus.hpp"
#include "calli/nn/core.hpp"
#include "calli/stroke_codec.hpp"
#include "calli/stroke_encoder.hpp"

namespace calli {

enum class ProviderKind { None, Naive, Font, Stroke };

std::string to_string(ProviderKind k);
ProviderKind provider_from_string(const std::string& s);

struct ConditionEmbedding {
    Vector vector;
    ProviderKind provider = ProviderKind::Naive;
    char32_t label = 0;
};

// Trainable per-label embedding rows, standard-normal initialized. The only
// stateful provider: rows move with the diffusion loss gradient.
class NaiveTable {
public:
    NaiveTable(std::vector<char32_t> labels, int dim, std::uint64_t seed);

    int dim() const { return static_cast<int>(rows_.w.rows()); }
    std::size_t label_count() const { return labels_.size(); }
    const std::vector<char32_t>& labels() const { return labels_; }
    bool contains(char32_t label) const { return index_.count(label) != 0; }
    std::size_t index_of(char32_t label) const;  // throws UnknownLabelError

    Vector row(char32_t label) const;
    nn::Param& param() { return rows_; }
    const nn::Param& param() const { return rows_; }

private:
    std::vector<char32_t> labels_;
    std::map<char32_t, std::size_t> index_;
    nn::Param rows_;  // [dim x n_labels]
};

// Condition providers share one interface so the training step is agnostic
// to which of the three mechanisms is plugged in.
class Conditioner {
public:
    virtual ~Conditioner() = default;
    virtual ProviderKind kind() const = 0;
    virtual int dim() const = 0;
    virtual bool covers(char32_t label) const = 0;
    virtual ConditionEmbedding condition(char32_t label) = 0;

    // Assembles the [dim x B] condition batch for a label sequence.
    Matrix condition_batch(std::span<const char32_t> labels);

    // Trainable state (empty for the pure providers).
    virtual nn::ParamList trainable() { return {}; }
    virtual void accumulate_grad(std::span<const char32_t> labels, const Matrix& dcond) {
        (void)labels;
        (void)dcond;
    }
};

class NaiveConditioner : public Conditioner {
public:
    NaiveConditioner(std::vector<char32_t> labels, int dim, std::uint64_t seed)
        : table_(std::move(labels), dim, seed) {}
    explicit NaiveConditioner(NaiveTable table) : table_(std::move(table)) {}

    ProviderKind kind() const override { return ProviderKind::Naive; }
    int dim() const override { return table_.dim(); }
    bool covers(char32_t label) const override { return table_.contains(label); }
    ConditionEmbedding condition(char32_t label) override;
    nn::ParamList trainable() override { return {&table_.param()}; }
    void accumulate_grad(std::span<const char32_t> labels, const Matrix& dcond) override;

    NaiveTable& table() { return table_; }
    const NaiveTable& table() const { return table_; }

private:
    NaiveTable table_;
};

// Renders the label in a held-out face and flattens the [0,1] raster; the
// pre-embedding has dimension resolution^2 and is never trained.
class FontConditioner : public Conditioner {
public:
    FontConditioner(const FontRef& font, int resolution);

    ProviderKind kind() const override { return ProviderKind::Font; }
    int dim() const override { return resolution_ * resolution_; }
    bool covers(char32_t label) const override { return font_.has_glyph(label); }
    ConditionEmbedding condition(char32_t label) override;
    int resolution() const { return resolution_; }

private:
    VectorFont font_;
    int resolution_;
    std::map<char32_t, Vector> cache_;
};

// Embeds the combined stroke+Wubi code with a frozen sequence encoder.
class StrokeConditioner : public Conditioner {
public:
    StrokeConditioner(StrokeDictionary dict, std::shared_ptr<StrokeEncoder> encoder);

    ProviderKind kind() const override { return ProviderKind::Stroke; }
    int dim() const override { return encoder_->config().hidden_dim; }
    bool covers(char32_t label) const override { return dict_.contains(label); }
    ConditionEmbedding condition(char32_t label) override;
    const StrokeDictionary& dictionary() const { return dict_; }

private:
    StrokeDictionary dict_;
    std::shared_ptr<StrokeEncoder> encoder_;
    std::map<char32_t, Vector> cache_;
};

// Spec-level entry points.
ConditionEmbedding naive_condition(NaiveTable& table, char32_t label);
ConditionEmbedding font_condition(char32_t label, const FontRef& holdout_font, int resolution);
ConditionEmbedding stroke_condition(char32_t label, const StrokeDictionary& dict,
                                    StrokeEncoder& encoder);

}  // namespace calli
