#include "ebrm/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ebrm/core.hpp"
#include "ebrm/rng.hpp"

namespace ebrm {

using nlohmann::json;

void EncoderConfig::validate() const {
    if (embed_dim == 0) throw ValidationError("embed_dim must be positive");
    if (hash_buckets == 0) throw ValidationError("hash_buckets must be positive");
    if (hash_buckets > (std::size_t{1} << 32)) throw ValidationError("hash_buckets exceeds 2^32");
    if (mlp_hidden == 0) throw ValidationError("mlp_hidden must be positive");
    for (int n : ngram_orders) {
        if (n <= 0) throw ValidationError("n-gram orders must be positive");
    }
}

json to_json(const EncoderConfig& cfg) {
    return json{{"embed_dim", cfg.embed_dim},       {"hash_buckets", cfg.hash_buckets},
                {"ngram_orders", cfg.ngram_orders}, {"mlp_hidden", cfg.mlp_hidden},
                {"max_cross_features", cfg.max_cross_features}, {"seed", cfg.seed}};
}

EncoderConfig encoder_config_from_json(const json& j) {
    EncoderConfig cfg;
    cfg.embed_dim = j.value("embed_dim", cfg.embed_dim);
    cfg.hash_buckets = j.value("hash_buckets", cfg.hash_buckets);
    cfg.ngram_orders = j.value("ngram_orders", cfg.ngram_orders);
    cfg.mlp_hidden = j.value("mlp_hidden", cfg.mlp_hidden);
    cfg.max_cross_features = j.value("max_cross_features", cfg.max_cross_features);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

// Parameters -----------------------------------------------------------------

ScorerParams ScorerParams::zeros(const EncoderConfig& cfg) {
    cfg.validate();
    ScorerParams p;
    p.embedding = Matrix(cfg.hash_buckets, cfg.embed_dim);
    p.cross_embedding = Matrix(cfg.hash_buckets, cfg.embed_dim);
    p.segment = Matrix(2, cfg.embed_dim);
    p.mlp_w1 = Matrix(cfg.mlp_hidden, cfg.embed_dim);
    p.mlp_b1.assign(cfg.mlp_hidden, 0.0);
    p.mlp_w2.assign(cfg.mlp_hidden, 0.0);
    p.biaffine_w = Matrix(cfg.embed_dim, cfg.embed_dim);
    return p;
}

ScorerParams ScorerParams::initialize(const EncoderConfig& cfg) {
    ScorerParams p = zeros(cfg);
    Rng rng(cfg.seed ^ 0x5eedba5e5eedba5eULL);
    const auto fill = [&](std::vector<double>& v, double limit) {
        for (double& x : v) x = rng.uniform(-limit, limit);
    };
    const auto glorot = [](std::size_t fan_in, std::size_t fan_out) {
        return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    };
    fill(p.embedding.data, 0.05);
    fill(p.cross_embedding.data, 0.05);
    fill(p.segment.data, 0.05);
    fill(p.mlp_w1.data, glorot(cfg.embed_dim, cfg.mlp_hidden));
    fill(p.mlp_w2, glorot(cfg.mlp_hidden, 1));
    fill(p.biaffine_w.data, glorot(cfg.embed_dim, cfg.embed_dim));
    return p;
}

bool ScorerParams::shape_matches(const EncoderConfig& cfg) const {
    const std::size_t d = cfg.embed_dim, h = cfg.mlp_hidden, b = cfg.hash_buckets;
    return embedding.rows == b && embedding.cols == d && cross_embedding.rows == b &&
           cross_embedding.cols == d && segment.rows == 2 && segment.cols == d &&
           mlp_w1.rows == h && mlp_w1.cols == d && mlp_b1.size() == h && mlp_w2.size() == h &&
           biaffine_w.rows == d && biaffine_w.cols == d &&
           embedding.data.size() == b * d && cross_embedding.data.size() == b * d;
}

bool ScorerParams::all_finite() const {
    bool ok = true;
    for_each_tensor([&](std::string_view, std::span<const double> t) {
        ok = ok && std::all_of(t.begin(), t.end(), [](double x) { return std::isfinite(x); });
    });
    return ok;
}

void ScorerParams::for_each_tensor(
    const std::function<void(std::string_view, std::span<double>)>& fn) {
    fn("embedding", embedding.data);
    fn("cross_embedding", cross_embedding.data);
    fn("segment", segment.data);
    fn("mlp_w1", mlp_w1.data);
    fn("mlp_b1", mlp_b1);
    fn("mlp_w2", mlp_w2);
    fn("mlp_b2", std::span<double>(&mlp_b2, 1));
    fn("biaffine_w", biaffine_w.data);
    fn("biaffine_b", std::span<double>(&biaffine_b, 1));
}

void ScorerParams::for_each_tensor(
    const std::function<void(std::string_view, std::span<const double>)>& fn) const {
    const_cast<ScorerParams*>(this)->for_each_tensor(
        [&](std::string_view name, std::span<double> t) { fn(name, t); });
}

// Gradients ------------------------------------------------------------------

Gradients::Gradients(const EncoderConfig& cfg)
    : segment(2, cfg.embed_dim),
      mlp_w1(cfg.mlp_hidden, cfg.embed_dim),
      mlp_b1(cfg.mlp_hidden, 0.0),
      mlp_w2(cfg.mlp_hidden, 0.0),
      biaffine_w(cfg.embed_dim, cfg.embed_dim) {}

void Gradients::clear() {
    embedding.clear();
    cross_embedding.clear();
    std::fill(segment.data.begin(), segment.data.end(), 0.0);
    std::fill(mlp_w1.data.begin(), mlp_w1.data.end(), 0.0);
    std::fill(mlp_b1.begin(), mlp_b1.end(), 0.0);
    std::fill(mlp_w2.begin(), mlp_w2.end(), 0.0);
    mlp_b2 = 0.0;
    std::fill(biaffine_w.data.begin(), biaffine_w.data.end(), 0.0);
    biaffine_b = 0.0;
}

namespace {

void scale_all(std::vector<double>& v, double f) {
    for (double& x : v) x *= f;
}

void axpy(std::span<double> y, std::span<const double> x, double a) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += a * x[i];
}

bool finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

std::span<double> sparse_row(std::unordered_map<std::uint32_t, std::vector<double>>& rows,
                             std::uint32_t bucket, std::size_t dim) {
    auto& r = rows[bucket];
    if (r.empty()) r.assign(dim, 0.0);
    return r;
}

}  // namespace

void Gradients::scale(double f) {
    for (auto& [k, r] : embedding) scale_all(r, f);
    for (auto& [k, r] : cross_embedding) scale_all(r, f);
    scale_all(segment.data, f);
    scale_all(mlp_w1.data, f);
    scale_all(mlp_b1, f);
    scale_all(mlp_w2, f);
    mlp_b2 *= f;
    scale_all(biaffine_w.data, f);
    biaffine_b *= f;
}

void Gradients::add(const Gradients& o, double f) {
    for (const auto& [k, r] : o.embedding) axpy(sparse_row(embedding, k, r.size()), r, f);
    for (const auto& [k, r] : o.cross_embedding) axpy(sparse_row(cross_embedding, k, r.size()), r, f);
    axpy(segment.data, o.segment.data, f);
    axpy(mlp_w1.data, o.mlp_w1.data, f);
    axpy(mlp_b1, o.mlp_b1, f);
    axpy(mlp_w2, o.mlp_w2, f);
    mlp_b2 += f * o.mlp_b2;
    axpy(biaffine_w.data, o.biaffine_w.data, f);
    biaffine_b += f * o.biaffine_b;
}

bool Gradients::all_finite() const {
    for (const auto& [k, r] : embedding)
        if (!finite(r)) return false;
    for (const auto& [k, r] : cross_embedding)
        if (!finite(r)) return false;
    return finite(segment.data) && finite(mlp_w1.data) && finite(mlp_b1) && finite(mlp_w2) &&
           std::isfinite(mlp_b2) && finite(biaffine_w.data) && std::isfinite(biaffine_b);
}

std::span<double> Gradients::embedding_row(std::uint32_t bucket, std::size_t dim) {
    return sparse_row(embedding, bucket, dim);
}

std::span<double> Gradients::cross_row(std::uint32_t bucket, std::size_t dim) {
    return sparse_row(cross_embedding, bucket, dim);
}

double Gradients::at(std::string_view tensor, std::size_t i) const {
    const auto sparse_at = [&](const auto& rows) {
        const std::size_t dim = segment.cols;
        auto it = rows.find(static_cast<std::uint32_t>(i / dim));
        return it == rows.end() ? 0.0 : it->second[i % dim];
    };
    if (tensor == "embedding") return sparse_at(embedding);
    if (tensor == "cross_embedding") return sparse_at(cross_embedding);
    if (tensor == "segment") return segment.data.at(i);
    if (tensor == "mlp_w1") return mlp_w1.data.at(i);
    if (tensor == "mlp_b1") return mlp_b1.at(i);
    if (tensor == "mlp_w2") return mlp_w2.at(i);
    if (tensor == "mlp_b2") return mlp_b2;
    if (tensor == "biaffine_w") return biaffine_w.data.at(i);
    if (tensor == "biaffine_b") return biaffine_b;
    throw std::out_of_range("unknown tensor '" + std::string(tensor) + "'");
}

// Features -------------------------------------------------------------------

std::uint64_t feature_hash(std::string_view bytes, std::uint64_t seed) {
    std::uint64_t h = 0xcbf29ce484222325ULL ^ (seed * 0x9E3779B97F4A7C15ULL);
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

std::uint32_t bucket_of(std::string_view key, const EncoderConfig& cfg) {
    return static_cast<std::uint32_t>(feature_hash(key, cfg.seed) % cfg.hash_buckets);
}

}  // namespace

std::vector<std::uint32_t> text_features(std::string_view normalized, const EncoderConfig& cfg) {
    std::vector<std::uint32_t> out;
    std::string key;
    for (std::string_view tok : tokenize(normalized)) {
        key = "w:";
        key += tok;
        out.push_back(bucket_of(key, cfg));
        const std::string padded = "<" + std::string(tok) + ">";
        for (int order : cfg.ngram_orders) {
            const auto n = static_cast<std::size_t>(order);
            if (padded.size() < n) continue;
            for (std::size_t i = 0; i + n <= padded.size(); ++i) {
                key = "c" + std::to_string(order) + ":";
                key.append(padded, i, n);
                out.push_back(bucket_of(key, cfg));
            }
        }
    }
    return out;
}

std::vector<std::uint32_t> cross_features(std::string_view a, std::string_view b,
                                          const EncoderConfig& cfg) {
    std::vector<std::uint32_t> out;
    const auto ta = tokenize(a);
    const auto tb = tokenize(b);
    std::string key;
    for (auto x : ta) {
        for (auto y : tb) {
            if (out.size() >= cfg.max_cross_features) return out;
            key = "x:";
            key += x;
            key += '\x1f';
            key += y;
            out.push_back(bucket_of(key, cfg));
        }
    }
    return out;
}

// Encoders -------------------------------------------------------------------

namespace {

void tanh_inplace(std::vector<double>& v) {
    for (double& x : v) x = std::tanh(x);
}

void add_mean_rows(std::vector<double>& acc, const Matrix& table,
                   const std::vector<std::uint32_t>& rows, double weight) {
    for (auto r : rows) axpy(acc, table.row(r), weight);
}

std::vector<double> tanh_backward(std::span<const double> out, std::span<const double> d_out) {
    std::vector<double> d_pre(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) d_pre[i] = d_out[i] * (1.0 - out[i] * out[i]);
    return d_pre;
}

}  // namespace

SingleTrace trace_single(std::string_view text, int segment, const ScorerParams& p,
                         const EncoderConfig& cfg) {
    SingleTrace t;
    t.features = text_features(normalize_text(text), cfg);
    t.segment = segment;
    t.output.assign(cfg.embed_dim, 0.0);
    if (!t.features.empty()) {
        add_mean_rows(t.output, p.embedding, t.features, 1.0 / static_cast<double>(t.features.size()));
    }
    axpy(t.output, p.segment.row(static_cast<std::size_t>(segment)), 1.0);
    tanh_inplace(t.output);
    return t;
}

EmbeddingVector encode_single(std::string_view text, int segment, const ScorerParams& p,
                              const EncoderConfig& cfg) {
    return trace_single(text, segment, p, cfg).output;
}

JointTrace trace_joint(std::string_view a, std::string_view b, const ScorerParams& p,
                       const EncoderConfig& cfg) {
    JointTrace t;
    const std::string na = normalize_text(a);
    const std::string nb = normalize_text(b);
    t.a_features = text_features(na, cfg);
    t.b_features = text_features(nb, cfg);
    t.cross = cross_features(na, nb, cfg);
    t.output.assign(cfg.embed_dim, 0.0);
    const std::size_t n = t.a_features.size() + t.b_features.size();
    if (n > 0) {
        const double w = 1.0 / static_cast<double>(n);
        add_mean_rows(t.output, p.embedding, t.a_features, w);
        add_mean_rows(t.output, p.embedding, t.b_features, w);
        axpy(t.output, p.segment.row(0), w * static_cast<double>(t.a_features.size()));
        axpy(t.output, p.segment.row(1), w * static_cast<double>(t.b_features.size()));
    }
    if (!t.cross.empty()) {
        add_mean_rows(t.output, p.cross_embedding, t.cross, 1.0 / static_cast<double>(t.cross.size()));
    }
    tanh_inplace(t.output);
    return t;
}

EmbeddingVector encode_joint(std::string_view a, std::string_view b, const ScorerParams& p,
                             const EncoderConfig& cfg) {
    return trace_joint(a, b, p, cfg).output;
}

void backprop_single(const SingleTrace& t, std::span<const double> d_output, const ScorerParams& p,
                     Gradients& g) {
    const std::size_t dim = t.output.size();
    const auto d_pre = tanh_backward(t.output, d_output);
    if (!t.features.empty()) {
        const double w = 1.0 / static_cast<double>(t.features.size());
        for (auto f : t.features) axpy(g.embedding_row(f, dim), d_pre, w);
    }
    axpy(g.segment.row(static_cast<std::size_t>(t.segment)), d_pre, 1.0);
    (void)p;
}

void backprop_joint(const JointTrace& t, std::span<const double> d_output, const ScorerParams& p,
                    Gradients& g) {
    const std::size_t dim = t.output.size();
    const auto d_pre = tanh_backward(t.output, d_output);
    const std::size_t n = t.a_features.size() + t.b_features.size();
    if (n > 0) {
        const double w = 1.0 / static_cast<double>(n);
        for (auto f : t.a_features) axpy(g.embedding_row(f, dim), d_pre, w);
        for (auto f : t.b_features) axpy(g.embedding_row(f, dim), d_pre, w);
        axpy(g.segment.row(0), d_pre, w * static_cast<double>(t.a_features.size()));
        axpy(g.segment.row(1), d_pre, w * static_cast<double>(t.b_features.size()));
    }
    if (!t.cross.empty()) {
        const double w = 1.0 / static_cast<double>(t.cross.size());
        for (auto f : t.cross) axpy(g.cross_row(f, dim), d_pre, w);
    }
    (void)p;
}

// Scoring heads --------------------------------------------------------------

double score_biaffine(std::span<const double> hq, std::span<const double> hi, const ScorerParams& p) {
    const std::size_t d = p.biaffine_w.rows;
    if (hq.size() != d || hi.size() != d) throw ValidationError("biaffine dimension mismatch");
    double s = 0.0;
    for (std::size_t r = 0; r < d; ++r) {
        if (hq[r] == 0.0) continue;
        const auto row = p.biaffine_w.row(r);
        double inner = 0.0;
        for (std::size_t c = 0; c < d; ++c) inner += row[c] * hi[c];
        s += hq[r] * inner;
    }
    return s + p.biaffine_b;
}

void backprop_biaffine(std::span<const double> hq, std::span<const double> hi, double d_score,
                       const ScorerParams& p, Gradients& g, std::span<double> d_hq,
                       std::span<double> d_hi) {
    const std::size_t d = p.biaffine_w.rows;
    for (std::size_t r = 0; r < d; ++r) {
        const auto row = p.biaffine_w.row(r);
        auto grow = g.biaffine_w.row(r);
        double inner = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            inner += row[c] * hi[c];
            grow[c] += d_score * hq[r] * hi[c];
            if (!d_hi.empty()) d_hi[c] += d_score * hq[r] * row[c];
        }
        if (!d_hq.empty()) d_hq[r] += d_score * inner;
    }
    g.biaffine_b += d_score;
}

MlpTrace trace_mlp(std::span<const double> h, const ScorerParams& p) {
    const std::size_t hidden = p.mlp_w1.rows;
    if (h.size() != p.mlp_w1.cols) throw ValidationError("MLP input dimension mismatch");
    MlpTrace t;
    t.hidden.resize(hidden);
    double s = p.mlp_b2;
    for (std::size_t k = 0; k < hidden; ++k) {
        const auto row = p.mlp_w1.row(k);
        double u = p.mlp_b1[k];
        for (std::size_t c = 0; c < row.size(); ++c) u += row[c] * h[c];
        t.hidden[k] = std::tanh(u);
        s += p.mlp_w2[k] * t.hidden[k];
    }
    t.score = s;
    return t;
}

double score_mlp(std::span<const double> h, const ScorerParams& p) { return trace_mlp(h, p).score; }

void backprop_mlp(std::span<const double> h, const MlpTrace& t, double d_score,
                  const ScorerParams& p, Gradients& g, std::span<double> d_h) {
    const std::size_t hidden = p.mlp_w1.rows;
    g.mlp_b2 += d_score;
    for (std::size_t k = 0; k < hidden; ++k) {
        g.mlp_w2[k] += d_score * t.hidden[k];
        const double du = d_score * p.mlp_w2[k] * (1.0 - t.hidden[k] * t.hidden[k]);
        if (du == 0.0) continue;
        g.mlp_b1[k] += du;
        axpy(g.mlp_w1.row(k), h, du);
        if (!d_h.empty()) axpy(d_h, p.mlp_w1.row(k), du);
    }
}

// Gradient evaluation --------------------------------------------------------

LossAndGradients gradients(const DifferentiableLoss& loss, const ScorerParams& p,
                           const EncoderConfig& cfg) {
    LossAndGradients out{0.0, Gradients(cfg)};
    out.loss = loss(p, &out.gradients);
    if (!std::isfinite(out.loss)) throw NonFiniteError("loss is not finite");
    if (!out.gradients.all_finite()) throw NonFiniteError("gradient has non-finite entries");
    return out;
}

// Checkpoints ----------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'E', 'B', 'R', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

template <class T>
void write_le(std::ostream& out, T value) {
    unsigned char buf[sizeof(T)];
    std::uint64_t bits = 0;
    std::memcpy(&bits, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <class T>
T read_le(std::istream& in) {
    unsigned char buf[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) {
        throw CheckpointError("checkpoint truncated");
    }
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= std::uint64_t{buf[i]} << (8 * i);
    T value;
    std::memcpy(&value, &bits, sizeof(T));
    return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, json header, const EncoderConfig& cfg,
                     const ScorerParams& params) {
    if (!params.shape_matches(cfg)) throw CheckpointError("parameters do not match config");
    header["config"] = to_json(cfg);
    header["format_version"] = kFormatVersion;
    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    write_le<std::uint32_t>(out, kFormatVersion);
    write_le<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    params.for_each_tensor([&](std::string_view, std::span<const double> t) {
        for (double x : t) write_le<double>(out, x);
    });
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw CheckpointError("'" + path.string() + "' is not a model checkpoint");
    }
    const auto version = read_le<std::uint32_t>(in);
    if (version != kFormatVersion) {
        throw CheckpointError("unsupported checkpoint format version " + std::to_string(version));
    }
    const auto header_len = read_le<std::uint64_t>(in);
    if (header_len > (std::uint64_t{1} << 24)) throw CheckpointError("checkpoint header too large");
    std::string text(header_len, '\0');
    if (!in.read(text.data(), static_cast<std::streamsize>(header_len))) {
        throw CheckpointError("checkpoint truncated");
    }
    Checkpoint ck;
    try {
        ck.header = json::parse(text);
        ck.config = encoder_config_from_json(ck.header.at("config"));
    } catch (const json::exception& e) {
        throw CheckpointError(std::string("bad checkpoint header: ") + e.what());
    }
    ck.params = ScorerParams::zeros(ck.config);
    ck.params.for_each_tensor([&](std::string_view, std::span<double> t) {
        for (double& x : t) x = read_le<double>(in);
    });
    if (in.peek() != std::char_traits<char>::eof()) {
        throw CheckpointError("checkpoint has trailing bytes; shape does not match config");
    }
    if (!ck.params.all_finite()) throw CheckpointError("checkpoint contains non-finite values");
    return ck;
}

}  // namespace ebrm
