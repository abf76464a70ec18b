#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace ebrm {

struct EncoderConfig {
    std::size_t embed_dim = 64;
    std::size_t hash_buckets = std::size_t{1} << 16;
    std::vector<int> ngram_orders{3, 4};  // character n-grams; word unigrams are always on
    std::size_t mlp_hidden = 64;          // scoring head: D -> mlp_hidden -> 1
    std::size_t max_cross_features = 256;
    std::uint64_t seed = 0;               // salts feature hashing and seeds initialization

    void validate() const;
    friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

nlohmann::json to_json(const EncoderConfig& cfg);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

/// Row-major dense matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
    std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

    friend bool operator==(const Matrix&, const Matrix&) = default;
};

using EmbeddingVector = std::vector<double>;

/// Every learnable parameter of the encoders and both scoring heads.
struct ScorerParams {
    Matrix embedding;        // hash_buckets x embed_dim, text features
    Matrix cross_embedding;  // hash_buckets x embed_dim, joint word-pair features
    Matrix segment;          // 2 x embed_dim
    Matrix mlp_w1;           // mlp_hidden x embed_dim
    std::vector<double> mlp_b1;
    std::vector<double> mlp_w2;
    double mlp_b2 = 0.0;
    Matrix biaffine_w;  // embed_dim x embed_dim
    double biaffine_b = 0.0;

    static ScorerParams zeros(const EncoderConfig& cfg);
    /// Embeddings uniform in [-0.05, 0.05]; weight matrices Glorot-uniform;
    /// biases zero. Deterministic in cfg.seed.
    static ScorerParams initialize(const EncoderConfig& cfg);

    bool shape_matches(const EncoderConfig& cfg) const;
    bool all_finite() const;

    /// Visits every tensor in a fixed order as a flat span.
    void for_each_tensor(const std::function<void(std::string_view, std::span<double>)>& fn);
    void for_each_tensor(
        const std::function<void(std::string_view, std::span<const double>)>& fn) const;

    friend bool operator==(const ScorerParams&, const ScorerParams&) = default;
};

/// Gradient with the same shape as ScorerParams. Embedding tables are kept
/// as sparse rows since an example touches only a handful of buckets.
struct Gradients {
    std::unordered_map<std::uint32_t, std::vector<double>> embedding;
    std::unordered_map<std::uint32_t, std::vector<double>> cross_embedding;
    Matrix segment;
    Matrix mlp_w1;
    std::vector<double> mlp_b1;
    std::vector<double> mlp_w2;
    double mlp_b2 = 0.0;
    Matrix biaffine_w;
    double biaffine_b = 0.0;

    Gradients() = default;
    explicit Gradients(const EncoderConfig& cfg);

    void clear();
    void scale(double factor);
    void add(const Gradients& other, double factor = 1.0);
    bool all_finite() const;

    std::span<double> embedding_row(std::uint32_t bucket, std::size_t dim);
    std::span<double> cross_row(std::uint32_t bucket, std::size_t dim);

    /// Gradient entry addressed like ScorerParams::for_each_tensor: tensor
    /// name plus flat index. Absent sparse rows read as zero.
    double at(std::string_view tensor, std::size_t flat_index) const;
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Feature hashing ------------------------------------------------------------

/// FNV-1a 64-bit whose offset basis is XORed with seed * 0x9E3779B97F4A7C15.
/// With seed 0 this is plain FNV-1a.
std::uint64_t feature_hash(std::string_view bytes, std::uint64_t seed);

/// Hashed buckets for word unigrams ("w:" + token) and padded character
/// n-grams ("c<n>:" + gram over "<token>") of normalized text.
std::vector<std::uint32_t> text_features(std::string_view normalized, const EncoderConfig& cfg);

/// Hashed (a-token, b-token) conjunctions in a-major order, capped at
/// cfg.max_cross_features.
std::vector<std::uint32_t> cross_features(std::string_view a_normalized,
                                          std::string_view b_normalized, const EncoderConfig& cfg);

// Encoders -------------------------------------------------------------------

struct SingleTrace {
    std::vector<std::uint32_t> features;
    int segment = 0;
    EmbeddingVector output;
};

struct JointTrace {
    std::vector<std::uint32_t> a_features;
    std::vector<std::uint32_t> b_features;
    std::vector<std::uint32_t> cross;
    EmbeddingVector output;
};

/// tanh(mean of feature embeddings + segment embedding).
SingleTrace trace_single(std::string_view text, int segment, const ScorerParams& p,
                         const EncoderConfig& cfg);
EmbeddingVector encode_single(std::string_view text, int segment, const ScorerParams& p,
                              const EncoderConfig& cfg);

/// tanh(mean over the features of both sides, each tagged with its segment
/// embedding, + mean of cross-feature embeddings). `a` is segment 0.
JointTrace trace_joint(std::string_view a, std::string_view b, const ScorerParams& p,
                       const EncoderConfig& cfg);
EmbeddingVector encode_joint(std::string_view a, std::string_view b, const ScorerParams& p,
                             const EncoderConfig& cfg);

void backprop_single(const SingleTrace& trace, std::span<const double> d_output,
                     const ScorerParams& p, Gradients& g);
void backprop_joint(const JointTrace& trace, std::span<const double> d_output,
                    const ScorerParams& p, Gradients& g);

// Scoring heads --------------------------------------------------------------

/// hq^T W hi + b.
double score_biaffine(std::span<const double> hq, std::span<const double> hi, const ScorerParams& p);
/// Accumulates parameter gradients and returns d/dhq, d/dhi through the outputs.
void backprop_biaffine(std::span<const double> hq, std::span<const double> hi, double d_score,
                       const ScorerParams& p, Gradients& g, std::span<double> d_hq,
                       std::span<double> d_hi);

struct MlpTrace {
    std::vector<double> hidden;  // tanh(W1 h + b1)
    double score = 0.0;
};

/// w2 . tanh(W1 h + b1) + b2.
MlpTrace trace_mlp(std::span<const double> h, const ScorerParams& p);
double score_mlp(std::span<const double> h, const ScorerParams& p);
void backprop_mlp(std::span<const double> h, const MlpTrace& trace, double d_score,
                  const ScorerParams& p, Gradients& g, std::span<double> d_h);

// Gradient evaluation --------------------------------------------------------

/// A scalar loss over the parameters that accumulates its exact gradient
/// into `grad` when non-null.
using DifferentiableLoss = std::function<double(const ScorerParams&, Gradients*)>;

struct LossAndGradients {
    double loss = 0.0;
    Gradients gradients;
};

/// Throws NonFiniteError if the loss or any gradient entry is not finite.
LossAndGradients gradients(const DifferentiableLoss& loss, const ScorerParams& p,
                           const EncoderConfig& cfg);

// Checkpoints ----------------------------------------------------------------

struct Checkpoint {
    nlohmann::json header;  // always carries "config"; callers add "kind" etc.
    EncoderConfig config;
    ScorerParams params;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Binary layout: "EBRMCKPT", u32 format version, u64 header length, JSON
/// header, then every tensor of ScorerParams as little-endian f64 in
/// for_each_tensor order.
void save_checkpoint(const std::filesystem::path& path, nlohmann::json header,
                     const EncoderConfig& cfg, const ScorerParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ebrm
