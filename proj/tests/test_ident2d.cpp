#include <spinefuse/ident2d.hpp>

#include <gtest/gtest.h>

#include <memory>
#include <numeric>

using namespace spinefuse;

namespace {

const DetectorGrid kGrid{100, 100, 1.0, 1.0};

PixelProbField constant_field(const std::vector<float>& row) {
    std::vector<float> values;
    for (std::size_t p = 0; p < kGrid.pixel_count(); ++p) values.insert(values.end(), row.begin(), row.end());
    return PixelProbField(kGrid, static_cast<int>(row.size()), std::move(values));
}

std::shared_ptr<const LabelImage> filled_labels(int label) {
    return std::make_shared<const LabelImage>(LabelImage{kGrid, std::vector<int>(kGrid.pixel_count(), label)});
}

} // namespace

TEST(Aggregate, OneHotField) {
    const auto field = constant_field({0, 0, 1, 0});
    const std::vector<Detection2D> dets{{Vec2(0, 0)}, {Vec2(-30, 20)}, {Vec2(49, -49)}};
    const auto r = aggregate_probmap(field, dets, 22.0, 6);
    ASSERT_EQ(r.map.rows(), 3);
    EXPECT_EQ(r.map.view_index, 6);
    for (int i = 0; i < 3; ++i) {
        EXPECT_EQ(r.map.p(i, 2), 1.0);
        EXPECT_EQ(r.map.p.row(i).sum(), 1.0);
    }
}

TEST(Aggregate, UniformField) {
    const auto field = constant_field(std::vector<float>(5, 0.2f));
    const std::vector<Detection2D> dets{{Vec2(3, 3)}};
    const auto r = aggregate_probmap(field, dets);
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(r.map.p(0, j), 0.2, 1e-7);
}

TEST(Aggregate, HalfAndHalfSquare) {
    // Columns iu < 50 (u < 0) are class 1, the rest class 2.
    std::vector<float> values;
    for (int iv = 0; iv < kGrid.nv; ++iv)
        for (int iu = 0; iu < kGrid.nu; ++iu) {
            values.push_back(iu < 50 ? 1.0f : 0.0f);
            values.push_back(iu < 50 ? 0.0f : 1.0f);
            values.push_back(0.0f);
        }
    const PixelProbField field(kGrid, 3, std::move(values));
    // Square [-11, 11) in u holds 11 pixel centers on each side of the split.
    const std::vector<Detection2D> dets{{Vec2(0, 0)}};
    const auto r = aggregate_probmap(field, dets);
    EXPECT_DOUBLE_EQ(r.map.p(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(r.map.p(0, 1), 0.5);
    EXPECT_DOUBLE_EQ(r.map.p(0, 2), 0.0);
}

TEST(Aggregate, ClippedAndExcluded) {
    const auto field = constant_field({0.25f, 0.75f});
    const std::vector<Detection2D> dets{{Vec2(0, 0)}, {Vec2(500, 0)}, {Vec2(49.4, 49.4)}};
    const auto r = aggregate_probmap(field, dets);
    ASSERT_EQ(r.map.rows(), 2);
    EXPECT_EQ(r.rows_from, (std::vector<int>{0, 2}));
    EXPECT_EQ(r.excluded, (std::vector<int>{1}));
    EXPECT_NEAR(r.map.p(1, 1), 0.75, 1e-7);
}

TEST(Aggregate, RowsSumToOneAndPermutationEquivariant) {
    auto labels = std::make_shared<LabelImage>(LabelImage{kGrid, std::vector<int>(kGrid.pixel_count(), 0)});
    SplitMix64 rng(4);
    for (auto& l : labels->labels) l = static_cast<int>(rng() % 7);
    ClassifierOracleSpec spec{neighbor_confusion(6, 0.2), 5.0, 77};
    const auto field = oracle_field(labels, spec);
    std::vector<Detection2D> dets;
    for (int i = 0; i < 6; ++i) dets.push_back({Vec2(100 * rng.uniform() - 50, 100 * rng.uniform() - 50)});
    const auto base = aggregate_probmap(field, dets);
    for (int i = 0; i < base.map.rows(); ++i) EXPECT_NEAR(base.map.p.row(i).sum(), 1.0, 1e-6);

    std::vector<int> perm{3, 0, 5, 1, 4, 2};
    std::vector<Detection2D> permuted;
    for (int k : perm) permuted.push_back(dets[static_cast<std::size_t>(k)]);
    const auto shuffled = aggregate_probmap(field, permuted);
    for (std::size_t i = 0; i < perm.size(); ++i) {
        EXPECT_EQ(shuffled.map.p.row(static_cast<Eigen::Index>(i)), base.map.p.row(perm[i]));
    }
}

TEST(SingleViewLabels, ArgmaxWithTieRule) {
    ProbMap pm{RowMatrix(3, 3), 0};
    pm.p << 0, 1, 0,
            0.5, 0.5, 0,
            0, 0, 1;
    EXPECT_EQ(single_view_labels(pm), (std::vector<int>{2, 1, 3}));
}

TEST(SingleViewLabels, MatchesBruteForceScan) {
    SplitMix64 rng(12);
    for (int t = 0; t < 200; ++t) {
        const int n = 1 + static_cast<int>(rng() % 8), c = 1 + static_cast<int>(rng() % 10);
        ProbMap pm{RowMatrix(n, c), 0};
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < c; ++j) pm.p(i, j) = std::floor(4 * rng.uniform()) / 4;  // frequent ties
        const auto got = single_view_labels(pm);
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double value = -1;
            for (int j = 0; j < c; ++j) {
                if (pm.p(i, j) > value) value = pm.p(i, j), best = j;
            }
            EXPECT_EQ(got[static_cast<std::size_t>(i)], best + 1);
        }
    }
}

TEST(ClassifierOracle, IdentityConfusionIsOneHot) {
    ClassifierOracleSpec spec{RowMatrix::Identity(4, 4), std::nullopt, 0};
    const auto field = oracle_field(filled_labels(3), spec);
    std::vector<double> px(4);
    field.probabilities(10, 20, px);
    EXPECT_EQ(px, (std::vector<double>{0, 0, 1, 0}));
    const auto background = oracle_field(filled_labels(0), spec);
    background.probabilities(0, 0, px);
    EXPECT_EQ(px, (std::vector<double>{0.25, 0.25, 0.25, 0.25}));
}

TEST(ClassifierOracle, NoisyConfusionAveragesToExpectation) {
    RowMatrix confusion = RowMatrix::Zero(3, 3);
    confusion << 0.9, 0.1, 0,
                 0, 1, 0,
                 0, 0, 1;
    ClassifierOracleSpec spec{confusion, 2.0, 31};
    const auto field = oracle_field(filled_labels(1), spec);
    // 40 x 40 = 1600 pixels.
    const std::vector<Detection2D> dets{{Vec2(0, 0)}};
    const auto r = aggregate_probmap(field, dets, 40.0);
    EXPECT_NEAR(r.map.p(0, 0), 0.9, 0.02);
    EXPECT_NEAR(r.map.p(0, 1), 0.1, 0.02);
    EXPECT_EQ(r.map.p(0, 2), 0.0);
}

TEST(ClassifierOracle, SameSeedSameField) {
    ClassifierOracleSpec spec{neighbor_confusion(5, 0.1), 3.0, 9};
    const auto a = oracle_field(filled_labels(2), spec), b = oracle_field(filled_labels(2), spec);
    std::vector<double> pa(5), pb(5);
    for (int iv = 0; iv < kGrid.nv; iv += 7)
        for (int iu = 0; iu < kGrid.nu; iu += 7) {
            a.probabilities(iu, iv, pa);
            b.probabilities(iu, iv, pb);
            ASSERT_EQ(pa, pb);
            EXPECT_NEAR(std::accumulate(pa.begin(), pa.end(), 0.0), 1.0, 1e-12);
        }
    spec.seed = 10;
    const auto c = oracle_field(filled_labels(2), spec);
    c.probabilities(0, 0, pb);
    a.probabilities(0, 0, pa);
    EXPECT_NE(pa, pb);
}

TEST(ClassifierOracle, RecoversLabelsInsideProjectedRegions) {
    const std::vector<ProjectedLabel> centroids{{VertebraLabel{3}, Vec2(0, -30)}, {VertebraLabel{4}, Vec2(0, 0)},
                                                {VertebraLabel{5}, Vec2(0, 30)}};
    auto labels = std::make_shared<const LabelImage>(label_image_from_centroids(centroids, kGrid, 15.0));
    EXPECT_EQ(labels->at(50, 50), 4);
    EXPECT_EQ(labels->at(0, 0), 0);
    const auto field = oracle_field(labels, ClassifierOracleSpec{RowMatrix::Identity(6, 6), std::nullopt, 0});
    const std::vector<Detection2D> dets{{Vec2(0, -30)}, {Vec2(0, 0)}, {Vec2(0, 30)}};
    const auto r = aggregate_probmap(field, dets);
    EXPECT_EQ(single_view_labels(r.map), (std::vector<int>{3, 4, 5}));
}

TEST(ProbMapType, ValidationAndJson) {
    ProbMap pm{RowMatrix(2, 3), 4};
    pm.p << 0.2, 0.3, 0.5,
            1, 0, 0;
    EXPECT_NO_THROW(pm.validate());
    const auto j = probmap_to_json(pm);
    EXPECT_EQ(j["labels_c"], 3);
    EXPECT_EQ(j["view"], 4);
    const auto back = probmap_from_json(j);
    EXPECT_EQ(back.p, pm.p);
    pm.p(0, 0) = 0.3;
    EXPECT_THROW(pm.validate(), Error);
    EXPECT_THROW(PixelProbField(kGrid, 2, std::vector<float>(kGrid.pixel_count() * 2, 0.3f)), Error);
}

TEST(NeighborConfusion, RowsAreStochastic) {
    const auto m = neighbor_confusion(26, 0.1);
    for (int t = 0; t < 26; ++t) EXPECT_NEAR(m.row(t).sum(), 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(m(0, 0), 0.9);
    EXPECT_DOUBLE_EQ(m(5, 5), 0.8);
    EXPECT_DOUBLE_EQ(m(5, 6), 0.1);
}
