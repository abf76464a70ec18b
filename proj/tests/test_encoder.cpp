#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "ebrm/encoder.hpp"
#include "ebrm/rng.hpp"
#include "support.hpp"

using namespace ebrm;
namespace fs = std::filesystem;

namespace {

EncoderConfig tiny(std::uint64_t seed = 3) {
    EncoderConfig c;
    c.embed_dim = 5;
    c.hash_buckets = 97;
    c.mlp_hidden = 4;
    c.max_cross_features = 30;
    c.seed = seed;
    return c;
}

std::vector<double> random_vec(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.uniform(-1, 1);
    return v;
}

}  // namespace

TEST(FeatureHash, MatchesPublishedFnv1aVectors) {
    EXPECT_EQ(feature_hash("", 0), 0xcbf29ce484222325ULL);
    EXPECT_EQ(feature_hash("a", 0), 0xaf63dc4c8601ec8cULL);
    EXPECT_EQ(feature_hash("foobar", 0), 0x85944171f73967e8ULL);
    EXPECT_NE(feature_hash("a", 1), feature_hash("a", 0));
}

TEST(Features, UnigramsAndPaddedNgrams) {
    EncoderConfig c;
    c.ngram_orders = {3};
    // "ab" -> w:ab plus c3 grams of "<ab>": "<ab", "ab>".
    const auto f = text_features("ab", c);
    ASSERT_EQ(f.size(), 3u);
    const auto bucket = [&](std::string_view s) {
        return static_cast<std::uint32_t>(feature_hash(s, c.seed) % c.hash_buckets);
    };
    EXPECT_EQ(f[0], bucket("w:ab"));
    EXPECT_EQ(f[1], bucket("c3:<ab"));
    EXPECT_EQ(f[2], bucket("c3:ab>"));
}

TEST(Features, CrossFeaturesAreCapped) {
    EncoderConfig c;
    c.max_cross_features = 7;
    EXPECT_EQ(cross_features("a b c d", "e f g h", c).size(), 7u);
    EXPECT_EQ(cross_features("a b", "c", c).size(), 2u);
}

TEST(EncodeSingle, DeterministicAndCaseInsensitive) {
    const EncoderConfig c = tiny();
    const ScorerParams p = ScorerParams::initialize(c);
    EXPECT_EQ(encode_single("gym weight", 0, p, c), encode_single("gym weight", 0, p, c));
    EXPECT_EQ(encode_single(normalize_text("Gym WEIGHT"), 0, p, c), encode_single("gym weight", 0, p, c));
}

TEST(EncodeSingle, EmptyTextWithZeroParamsIsZero) {
    const EncoderConfig c = tiny();
    const auto h = encode_single("", 0, ScorerParams::zeros(c), c);
    ASSERT_EQ(h.size(), c.embed_dim);
    for (double x : h) EXPECT_EQ(x, 0.0);
}

TEST(EncodeJoint, AsymmetricBySegment) {
    const EncoderConfig c = tiny();
    const ScorerParams p = ScorerParams::initialize(c);
    EXPECT_NE(encode_joint("gym weight", "dumbbell", p, c), encode_joint("dumbbell", "gym weight", p, c));
    EXPECT_EQ(encode_joint("gym weight", "dumbbell", p, c), encode_joint("gym weight", "dumbbell", p, c));
}

TEST(EncodeJoint, WithoutCrossOrSegmentsPoolsTheUnion) {
    const EncoderConfig c = tiny();
    ScorerParams p = ScorerParams::initialize(c);
    std::fill(p.segment.data.begin(), p.segment.data.end(), 0.0);
    std::fill(p.cross_embedding.data.begin(), p.cross_embedding.data.end(), 0.0);
    auto feats = text_features("gym weight", c);
    const auto fb = text_features("dumbbell set", c);
    feats.insert(feats.end(), fb.begin(), fb.end());
    std::vector<double> expected(c.embed_dim, 0.0);
    for (auto f : feats) {
        for (std::size_t d = 0; d < c.embed_dim; ++d) expected[d] += p.embedding(f, d) / feats.size();
    }
    const auto h = encode_joint("gym weight", "dumbbell set", p, c);
    for (std::size_t d = 0; d < c.embed_dim; ++d) EXPECT_NEAR(h[d], std::tanh(expected[d]), 1e-12);
}

TEST(Biaffine, AnalyticCases) {
    EncoderConfig c = tiny();
    c.embed_dim = 3;
    ScorerParams p = ScorerParams::zeros(c);
    for (std::size_t d = 0; d < 3; ++d) p.biaffine_w(d, d) = 1.0;
    const std::vector<double> e1{0, 1, 0};
    EXPECT_DOUBLE_EQ(score_biaffine(e1, e1, p), 1.0);
    ScorerParams z = ScorerParams::zeros(c);
    z.biaffine_b = 0.5;
    EXPECT_DOUBLE_EQ(score_biaffine(std::vector<double>{3, -1, 2}, std::vector<double>{0.2, 7, 1}, z), 0.5);
    EXPECT_THROW(score_biaffine(std::vector<double>{1}, e1, p), ValidationError);
}

TEST(Biaffine, MatchesNaiveTripleLoop) {
    Rng rng(1);
    const EncoderConfig c = tiny();
    for (int t = 0; t < 20; ++t) {
        ScorerParams p = ScorerParams::initialize(tiny(t));
        p.biaffine_b = rng.uniform(-1, 1);
        const auto hq = random_vec(rng, c.embed_dim), hi = random_vec(rng, c.embed_dim);
        double s = p.biaffine_b;
        for (std::size_t a = 0; a < c.embed_dim; ++a) {
            for (std::size_t b = 0; b < c.embed_dim; ++b) s += hq[a] * p.biaffine_w(a, b) * hi[b];
        }
        EXPECT_NEAR(score_biaffine(hq, hi, p), s, 1e-12);
    }
}

TEST(Mlp, ZeroWeightsGiveBiasAndRandomMatchesHandForward) {
    const EncoderConfig c = tiny();
    ScorerParams z = ScorerParams::zeros(c);
    z.mlp_b2 = -0.25;
    Rng rng(2);
    EXPECT_DOUBLE_EQ(score_mlp(random_vec(rng, c.embed_dim), z), -0.25);

    ScorerParams p = ScorerParams::initialize(c);
    for (auto& b : p.mlp_b1) b = rng.uniform(-0.5, 0.5);
    p.mlp_b2 = 0.1;
    const std::vector<double> zero(c.embed_dim, 0.0);
    double at_zero = p.mlp_b2;
    for (std::size_t j = 0; j < c.mlp_hidden; ++j) at_zero += p.mlp_w2[j] * std::tanh(p.mlp_b1[j]);
    EXPECT_NEAR(score_mlp(zero, p), at_zero, 1e-12);
    for (int t = 0; t < 20; ++t) {
        const auto h = random_vec(rng, c.embed_dim);
        double s = p.mlp_b2;
        for (std::size_t j = 0; j < c.mlp_hidden; ++j) {
            double a = p.mlp_b1[j];
            for (std::size_t d = 0; d < c.embed_dim; ++d) a += p.mlp_w1(j, d) * h[d];
            s += p.mlp_w2[j] * std::tanh(a);
        }
        EXPECT_NEAR(score_mlp(h, p), s, 1e-12);
    }
}

TEST(Gradients, BiasGradientIsOneAndOffPathIsZero) {
    const EncoderConfig c = tiny();
    ScorerParams p = ScorerParams::zeros(c);
    const std::vector<double> hq{1, 2, 3, 4, 5}, hi{5, 4, 3, 2, 1};
    const DifferentiableLoss loss = [&](const ScorerParams& q, Gradients* g) {
        std::vector<double> dq(c.embed_dim), di(c.embed_dim);
        if (g) backprop_biaffine(hq, hi, 1.0, q, *g, dq, di);
        return score_biaffine(hq, hi, q);
    };
    const auto lg = gradients(loss, p, c);
    EXPECT_DOUBLE_EQ(lg.gradients.at("biaffine_b", 0), 1.0);
    EXPECT_DOUBLE_EQ(lg.gradients.at("biaffine_w", 0), hq[0] * hi[0]);
    for (std::size_t i = 0; i < c.mlp_hidden * c.embed_dim; ++i) EXPECT_EQ(lg.gradients.at("mlp_w1", i), 0.0);
    EXPECT_TRUE(lg.gradients.embedding.empty());
}

TEST(Gradients, FiniteDifferencesAgreeOnBothEncoders) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const EncoderConfig c = tiny(seed);
        const ScorerParams p = ScorerParams::initialize(c);
        const DifferentiableLoss joint = [&](const ScorerParams& q, Gradients* g) {
            const JointTrace jt = trace_joint("gym weight", "dumbbell rack", q, c);
            const MlpTrace mt = trace_mlp(jt.output, q);
            if (g) {
                std::vector<double> dh(c.embed_dim);
                backprop_mlp(jt.output, mt, 1.0, q, *g, dh);
                backprop_joint(jt, dh, q, *g);
            }
            return mt.score;
        };
        EXPECT_LT(ebrm::testing::finite_difference_check(joint, p, c).max_relative_error, 1e-4);

        const DifferentiableLoss bi = [&](const ScorerParams& q, Gradients* g) {
            const SingleTrace a = trace_single("gym weight", 0, q, c);
            const SingleTrace b = trace_single("dumbbell rack", 1, q, c);
            if (g) {
                std::vector<double> da(c.embed_dim), db(c.embed_dim);
                backprop_biaffine(a.output, b.output, 1.0, q, *g, da, db);
                backprop_single(a, da, q, *g);
                backprop_single(b, db, q, *g);
            }
            return score_biaffine(a.output, b.output, q);
        };
        EXPECT_LT(ebrm::testing::finite_difference_check(bi, p, c).max_relative_error, 1e-4);
    }
}

TEST(Init, DeterministicInSeed) {
    EXPECT_EQ(ScorerParams::initialize(tiny(4)), ScorerParams::initialize(tiny(4)));
    EXPECT_NE(ScorerParams::initialize(tiny(4)), ScorerParams::initialize(tiny(5)));
    const ScorerParams p = ScorerParams::initialize(tiny(4));
    for (double x : p.embedding.data) EXPECT_LE(std::abs(x), 0.05);
    for (double b : p.mlp_b1) EXPECT_EQ(b, 0.0);
}

TEST(Config, JsonRoundTripAndValidation) {
    const EncoderConfig c = tiny(9);
    EXPECT_EQ(encoder_config_from_json(to_json(c)), c);
    EncoderConfig bad = c;
    bad.embed_dim = 0;
    EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Checkpoint, RoundTripAndCorruption) {
    const EncoderConfig c = tiny();
    const ScorerParams p = ScorerParams::initialize(c);
    const fs::path path = fs::temp_directory_path() / "ebrm_ckpt.bin";
    save_checkpoint(path, {{"kind", "test"}}, c, p);
    const Checkpoint ck = load_checkpoint(path);
    EXPECT_EQ(ck.config, c);
    EXPECT_EQ(ck.params, p);
    EXPECT_EQ(ck.header.at("kind"), "test");

    std::string bytes;
    {
        std::ifstream in(path, std::ios::binary);
        bytes.assign(std::istreambuf_iterator<char>(in), {});
    }
    const auto write = [&](const std::string& b) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << b;
    };
    write(bytes.substr(0, bytes.size() - 3));
    EXPECT_THROW(load_checkpoint(path), CheckpointError);
    write(bytes + "x");
    EXPECT_THROW(load_checkpoint(path), CheckpointError);
    write("NOTACKPT" + bytes.substr(8));
    EXPECT_THROW(load_checkpoint(path), CheckpointError);
}
