#include "rfm/model.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace rfm;

namespace {

VelocityField random_field(std::uint64_t seed, ModelConfig cfg = {}) {
    Rng rng = make_stream(seed, Stream::init);
    VelocityField f = init_velocity_field(cfg, rng);
    std::normal_distribution<double> n(0.0, 0.1);
    auto& last = f.tensors[f.tensors.size() - 2].value;
    for (Eigen::Index i = 0; i < last.size(); ++i) last.data()[i] = n(rng);
    return f;
}

Matrix random_points(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d;
    Matrix x(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
    return x;
}

} // namespace

TEST(Embedding, ZeroTimeGivesSinZeroCosOne) {
    const auto e = SinusoidalEmbedding::geometric(8)(0.0);
    ASSERT_EQ(e.size(), 16u);
    for (std::size_t k = 0; k < 8; ++k) {
        EXPECT_EQ(e[2 * k], 0.0);
        EXPECT_EQ(e[2 * k + 1], 1.0);
    }
}

TEST(Embedding, PairsLieOnUnitCircle) {
    const auto emb = SinusoidalEmbedding::geometric(8);
    for (double t : {0.013, 0.5, 0.77, 1.0, 1.3, -0.2}) {
        const auto e = emb(t);
        for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(e[2 * k] * e[2 * k] + e[2 * k + 1] * e[2 * k + 1], 1.0, 1e-15);
    }
}

TEST(Embedding, UnitFrequencyAtHalfPi) {
    const SinusoidalEmbedding emb({1.0, 2.0});
    const auto e = emb(std::numbers::pi / 2);
    EXPECT_DOUBLE_EQ(e[0], 1.0);
    EXPECT_NEAR(e[1], 0.0, 1e-16);
}

TEST(Embedding, GeometricLadder) {
    const auto emb = SinusoidalEmbedding::geometric(8);
    EXPECT_EQ(emb.dim(), 16u);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(emb.frequencies()[k], std::pow(2.0, k) * std::numbers::pi);
}

TEST(Embedding, RejectsNonIncreasingFrequencies) {
    EXPECT_THROW(SinusoidalEmbedding({1.0, 1.0}), std::invalid_argument);
    EXPECT_THROW(SinusoidalEmbedding({2.0, 1.0}), std::invalid_argument);
    EXPECT_THROW(SinusoidalEmbedding(std::vector<double>{}), std::invalid_argument);
}

TEST(VelocityField, DefaultArchitecture) {
    Rng rng = make_stream(0, Stream::init);
    const VelocityField f = init_velocity_field({}, rng);
    ASSERT_EQ(f.num_layers(), 4u);
    EXPECT_EQ(f.input_dim(), 18u);
    EXPECT_EQ(f.weight(0).rows(), 18);
    EXPECT_EQ(f.weight(0).cols(), 128);
    EXPECT_EQ(f.weight(3).cols(), 2);
    EXPECT_EQ(f.num_parameters(), 18u * 128 + 128 + 2 * (128 * 128 + 128) + 128 * 2 + 2);
    const double bound = std::sqrt(6.0 / 18.0);
    EXPECT_LE(f.weight(0).cwiseAbs().maxCoeff(), bound);
    EXPECT_GT(f.weight(0).cwiseAbs().maxCoeff(), 0.9 * bound);
}

TEST(VelocityField, ZeroFinalLayerGivesZeroOutput) {
    Rng rng = make_stream(3, Stream::init);
    const VelocityField f = init_velocity_field({}, rng);
    const Matrix x = random_points(50, 1);
    const Matrix v = predict(f, x, 0.37);
    EXPECT_TRUE((v.array() == 0.0).all());
}

TEST(VelocityField, ForwardMatchesScalarOracle) {
    const VelocityField f = random_field(9);
    const Matrix x = random_points(20, 2);
    std::vector<double> t(20);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<double>(i) / 19.0;
    const Matrix v = predict(f, x, t);
    ASSERT_EQ(v.rows(), 20);
    ASSERT_EQ(v.cols(), 2);
    for (Eigen::Index i = 0; i < 20; ++i) {
        const auto ref = oracle::mlp_row(f, x(i, 0), x(i, 1), t[static_cast<std::size_t>(i)]);
        EXPECT_NEAR(v(i, 0), ref[0], 1e-12);
        EXPECT_NEAR(v(i, 1), ref[1], 1e-12);
    }
}

TEST(VelocityField, DeterministicAcrossRuns) {
    const Matrix x = random_points(64, 5);
    const Matrix a = predict(random_field(42), x, 0.5);
    const Matrix b = predict(random_field(42), x, 0.5);
    EXPECT_TRUE((a.array() == b.array()).all());
}

TEST(VelocityField, SingleRowEqualsBatchRowBitwise) {
    const VelocityField f = random_field(4);
    const Matrix x = random_points(37, 6);
    std::vector<double> t(37);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.027 * static_cast<double>(i);
    const Matrix batch = predict(f, x, t);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Matrix one = predict(f, x.row(i), std::span<const double>(&t[static_cast<std::size_t>(i)], 1));
        EXPECT_EQ(one(0, 0), batch(i, 0));
        EXPECT_EQ(one(0, 1), batch(i, 1));
    }
}

TEST(VelocityField, BatchTimeMismatchThrows) {
    const VelocityField f = random_field(1);
    const std::vector<double> t(3, 0.5);
    EXPECT_THROW(predict(f, random_points(4, 1), t), std::invalid_argument);
    EXPECT_THROW(predict(f, Matrix::Zero(3, 3), t), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsExact) {
    const VelocityField f = random_field(77);
    const auto path = (std::filesystem::temp_directory_path() / "rfm_test_model.ckpt").string();
    save_checkpoint(path, f);
    const VelocityField g = load_checkpoint(path);
    ASSERT_EQ(g.tensors.size(), f.tensors.size());
    for (std::size_t i = 0; i < f.tensors.size(); ++i) {
        EXPECT_EQ(g.tensors[i].name, f.tensors[i].name);
        EXPECT_TRUE((g.tensors[i].value.array() == f.tensors[i].value.array()).all());
    }
    EXPECT_EQ(g.embedding.frequencies(), f.embedding.frequencies());
    std::remove(path.c_str());
}

TEST(Checkpoint, RejectsCorruptFiles) {
    const auto path = (std::filesystem::temp_directory_path() / "rfm_test_bad.ckpt").string();
    {
        std::ofstream out(path);
        out << "rfm-checkpoint 1\nfrequencies 1 3.14\ntensors 2\nW0 4 2\n1 2 3\n";
    }
    EXPECT_THROW(load_checkpoint(path), std::runtime_error);
    {
        std::ofstream out(path);
        out << "not-a-checkpoint\n";
    }
    EXPECT_THROW(load_checkpoint(path), std::runtime_error);
    std::remove(path.c_str());
    EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}
