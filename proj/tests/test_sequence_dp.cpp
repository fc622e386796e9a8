#include "oracles.hpp"

#include <spinefuse/random.hpp>
#include <spinefuse/sequence_dp.hpp>

#include <gtest/gtest.h>

using namespace spinefuse;

namespace {

const DpParams kParams{0.1, 0.8};

ProbMap random_probmap(SplitMix64& rng, int n, int c) {
    ProbMap pm{RowMatrix(n, c), 0};
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < c; ++j) pm.p(i, j) = rng.uniform();
        pm.p.row(i) /= pm.p.row(i).sum();
    }
    return pm;
}

oracle::Mat to_mat(const RowMatrix& m) {
    oracle::Mat out(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
    return out;
}

ProbMap one_hot_diagonal(int n, int c, int first_col) {
    ProbMap pm{RowMatrix::Zero(n, c), 0};
    for (int i = 0; i < n; ++i) pm.p(i, first_col + i) = 1.0;
    return pm;
}

} // namespace

TEST(DpTable, HandExecutedExample) {
    ProbMap pm{RowMatrix(2, 3), 0};
    pm.p << 1, 0, 0,
            0, 1, 0;
    const auto r = dp_table(pm, kParams);
    EXPECT_EQ(r.opt(0, 0), 1.0);
    EXPECT_EQ(r.opt(1, 0), 0.0);
    EXPECT_DOUBLE_EQ(r.opt(1, 1), 1.8);
    EXPECT_DOUBLE_EQ(r.opt(1, 2), 0.1);
    EXPECT_DOUBLE_EQ(r.best_score, 1.8);
    EXPECT_EQ(r.best_last_col, 2);
    EXPECT_DOUBLE_EQ(r.seq_loss, -0.125);
}

TEST(DpTable, MatchesChainEnumeration) {
    SplitMix64 rng(2024);
    for (int t = 0; t < 500; ++t) {
        const int n = 1 + static_cast<int>(rng() % 6), c = 1 + static_cast<int>(rng() % 8);
        const auto pm = random_probmap(rng, n, c);
        const auto got = dp_table(pm, kParams);
        const auto want = oracle::enumerate_chains(to_mat(pm.p), 0.1, 0.8);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) ASSERT_NEAR(got.opt(i, j), want[i][j], 1e-12) << t << " " << i << " " << j;
    }
}

TEST(DpTable, ZeroAndSingleRow) {
    const ProbMap zero{RowMatrix::Zero(4, 5), 0};
    const auto r = dp_table(zero, kParams);
    EXPECT_TRUE(r.opt.isZero());
    EXPECT_EQ(r.best_score, 0.0);
    EXPECT_EQ(r.seq_loss, 1.0);
    EXPECT_EQ(sequence_loss(zero, kParams), 1.0);

    SplitMix64 rng(1);
    const auto one = random_probmap(rng, 1, 7);
    EXPECT_EQ(dp_table(one, kParams).opt, one.p);
}

TEST(SequenceLoss, UniformClosedForm) {
    const ProbMap pm{RowMatrix::Constant(3, 26, 1.0 / 26), 0};
    const double expected = 1.0 - (1.0 / 26) * (1.0 + 2 * 0.8) / 2.4;
    EXPECT_NEAR(sequence_loss(pm, kParams), expected, 1e-15);
}

TEST(DpTable, OneHotDiagonalScore) {
    for (int n = 1; n <= 8; ++n) {
        const auto r = dp_table(one_hot_diagonal(n, 12, 2), kParams);
        EXPECT_NEAR(r.best_score, 1.0 + (n - 1) * 0.8, 1e-12);
        EXPECT_EQ(r.best_last_col, 2 + n);
    }
}

TEST(DpTable, MonotoneInEntries) {
    SplitMix64 rng(77);
    for (int t = 0; t < 300; ++t) {
        const int n = 1 + static_cast<int>(rng() % 6), c = 1 + static_cast<int>(rng() % 8);
        auto pm = random_probmap(rng, n, c);
        const double before = dp_table(pm, kParams).best_score;
        pm.p(static_cast<Eigen::Index>(rng() % n), static_cast<Eigen::Index>(rng() % c)) += rng.uniform();
        EXPECT_GE(dp_table(pm, kParams).best_score, before);
    }
}

TEST(DpTable, ScaleCovariance) {
    SplitMix64 rng(5);
    for (int t = 0; t < 100; ++t) {
        const auto pm = random_probmap(rng, 1 + static_cast<int>(rng() % 6), 1 + static_cast<int>(rng() % 8));
        const double s = 4.0 * rng.uniform();
        const auto base = dp_table(pm, kParams);
        const auto scaled = dp_table(ProbMap{s * pm.p, 0}, kParams);
        EXPECT_LT((scaled.opt - s * base.opt).cwiseAbs().maxCoeff(), 1e-12);
        if (s > 0) {
            EXPECT_EQ(scaled.best_last_col, base.best_last_col);
        }
    }
}

TEST(DpParamsCheck, RejectsInvalid) {
    const ProbMap pm{RowMatrix::Constant(2, 2, 0.5), 0};
    EXPECT_THROW(dp_table(pm, DpParams{0.9, 0.8}), Error);
    EXPECT_THROW(dp_table(pm, DpParams{-0.1, 0.8}), Error);
    EXPECT_THROW(dp_table(pm, DpParams{0.1, 0.0}), Error);
}

TEST(CorrectLabels, PerfectDiagonal) {
    const auto c = correct_labels(one_hot_diagonal(5, 26, 20), kParams);
    EXPECT_TRUE(c.anchored);
    EXPECT_EQ(c.labels, (std::vector<int>{21, 22, 23, 24, 25}));
}

TEST(CorrectLabels, SingleOutlierIsCorrected) {
    for (int row = 0; row < 4; ++row) {
        auto pm = one_hot_diagonal(5, 26, 10);
        pm.p.row(row).setZero();
        pm.p(row, 3) = 1.0;  // far off the diagonal
        const auto c = correct_labels(pm, kParams);
        EXPECT_TRUE(c.anchored);
        EXPECT_EQ(c.labels, (std::vector<int>{11, 12, 13, 14, 15})) << "row " << row;
        EXPECT_EQ(c.row_argmax[static_cast<std::size_t>(row)], 4);
        // Margin: the true anchor beats every other last-row column.
        for (int j = 0; j < 26; ++j) {
            if (j != 14) {
                EXPECT_GT(c.dp.opt(4, 14), c.dp.opt(4, j) + 0.5);
            }
        }
    }
}

TEST(CorrectLabels, SingleRowAndInfeasibleAnchor) {
    ProbMap one{RowMatrix::Zero(1, 6), 0};
    one.p(0, 4) = 0.7, one.p(0, 1) = 0.3;
    EXPECT_EQ(correct_labels(one, kParams).labels, (std::vector<int>{5}));

    // The last row is confident about label 1: a 3-long chain ending there
    // would need labels -1 and 0.
    ProbMap pm{RowMatrix::Zero(3, 4), 0};
    pm.p(0, 2) = 1.0;
    pm.p(1, 3) = 1.0;
    pm.p(2, 0) = 1.0;
    const auto c = correct_labels(pm, kParams);
    EXPECT_FALSE(c.anchored);
    EXPECT_EQ(c.labels, (std::vector<int>{3, 4, 1}));
}

TEST(CorrectLabels, AlwaysConsecutiveWhenAnchored) {
    SplitMix64 rng(99);
    for (int t = 0; t < 300; ++t) {
        const auto pm = random_probmap(rng, 1 + static_cast<int>(rng() % 6), 6 + static_cast<int>(rng() % 6));
        const auto c = correct_labels(pm, kParams);
        if (!c.anchored) continue;
        ASSERT_GE(c.labels.front(), 1);
        for (std::size_t i = 1; i < c.labels.size(); ++i) ASSERT_EQ(c.labels[i], c.labels[i - 1] + 1);
    }
}

TEST(DpResultJson, HasTableScoreLoss) {
    const auto j = dp_result_to_json(dp_table(one_hot_diagonal(2, 3, 0), kParams));
    EXPECT_EQ(j["table"].size(), 2u);
    EXPECT_DOUBLE_EQ(j["best_score"].get<double>(), 1.8);
    EXPECT_DOUBLE_EQ(j["seq_loss"].get<double>(), -0.125);
}
