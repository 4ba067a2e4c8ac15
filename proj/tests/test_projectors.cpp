#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "lmmvqa/common.hpp"
#include "lmmvqa/projectors.hpp"

using namespace lmmvqa;
using autograd::Parameter;
using autograd::Var;

namespace {

SpatialFeatures random_spatial(int k, int n_p, int c_sp, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    SpatialFeatures features;
    features.patch_size = 14;
    features.tensor.items = k;
    features.tensor.rows_per_item = n_p;
    features.tensor.data.resize(static_cast<Eigen::Index>(k) * n_p, c_sp);
    for (Eigen::Index r = 0; r < features.tensor.data.rows(); ++r)
        for (Eigen::Index c = 0; c < c_sp; ++c) features.tensor.data(r, c) = dist(rng);
    return features;
}

TemporalFeatures random_temporal(int k, int c_tp, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    TemporalFeatures features;
    features.tensor.items = k;
    features.tensor.rows_per_item = 1;
    features.tensor.data.resize(k, c_tp);
    for (Eigen::Index r = 0; r < k; ++r)
        for (Eigen::Index c = 0; c < c_tp; ++c) features.tensor.data(r, c) = dist(rng);
    return features;
}

// Central finite differences against the analytic gradient on sampled
// parameter coordinates.
void gradient_check(std::vector<Parameter*> params, const std::function<Var()>& graph,
                    int coords_per_param, std::uint64_t seed, double tolerance = 1e-4) {
    std::mt19937_64 rng(seed);
    for (Parameter* p : params) p->zero_grad();
    autograd::backward(graph());

    for (Parameter* p : params) {
        std::uniform_int_distribution<Eigen::Index> row(0, p->value.rows() - 1);
        std::uniform_int_distribution<Eigen::Index> col(0, p->value.cols() - 1);
        for (int i = 0; i < coords_per_param; ++i) {
            const Eigen::Index r = row(rng), c = col(rng);
            const double saved = p->value(r, c);
            const double eps = 1e-5;
            p->value(r, c) = saved + eps;
            const double plus = graph().value()(0, 0);
            p->value(r, c) = saved - eps;
            const double minus = graph().value()(0, 0);
            p->value(r, c) = saved;
            const double numeric = (plus - minus) / (2.0 * eps);
            const double analytic = p->grad(r, c);
            const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
            INFO(p->name, "(", r, ",", c, ") numeric=", numeric, " analytic=", analytic);
            CHECK(std::abs(numeric - analytic) / denom < tolerance);
        }
    }
}

}  // namespace

TEST_CASE("spatial projector shape contract") {
    SpatialProjector proj(SpatialProjectorVariant::vit, 32, 64, 4, 1);
    const SpatialFeatures features = random_spatial(2, 256, 32, 2);
    const TokenBlock block = project_spatial(features, proj);
    CHECK(block.modality == Modality::spatial);
    CHECK(block.count() == 512);
    CHECK(block.width() == 64);
}

TEST_CASE("mlp variant with zero weights maps zero features to zero tokens") {
    SpatialProjector proj(SpatialProjectorVariant::mlp, 8, 16, 4, 3);
    for (Parameter* p : proj.parameters()) p->value.setZero();
    SpatialFeatures features = random_spatial(1, 4, 8, 4);
    features.tensor.data.setZero();
    const TokenBlock block = project_spatial(features, proj);
    CHECK(block.tokens.norm() == 0.0);
}

TEST_CASE("spatial projector rejects width mismatches") {
    SpatialProjector proj(SpatialProjectorVariant::vit, 32, 64, 4, 5);
    const SpatialFeatures features = random_spatial(1, 16, 24, 6);
    CHECK_THROWS_AS(project_spatial(features, proj), ShapeError);
}

TEST_CASE("temporal projector shape contract, K-independent") {
    TemporalProjector proj(64, 4, 32, 7);
    const TokenBlock block = project_temporal(random_temporal(10, 64, 8), proj);
    CHECK(block.count() == 4);
    CHECK(block.width() == 32);
    CHECK(block.modality == Modality::temporal);

    for (int n_t : {4, 16, 64, 256}) {
        TemporalProjector tiered(16, n_t, 8, 9);
        CHECK(project_temporal(random_temporal(3, 16, 10), tiered).count() == n_t);
    }
}

TEST_CASE("temporal projector: K=1 mean is the identity over the chunk axis") {
    TemporalProjector proj(16, 8, 8, 11);
    const TemporalFeatures one = random_temporal(1, 16, 12);
    const TokenBlock block = project_temporal(one, proj);

    // Manual affine map of the single chunk, reshaped row-major.
    Var expanded = proj.forward(Var::constant(one.tensor.data));
    CHECK((block.tokens - expanded.value()).norm() == doctest::Approx(0.0));
}

TEST_CASE("temporal projector: opposite projected tokens cancel to zero") {
    TemporalProjector proj(6, 4, 8, 13);
    // zero bias so f(x) + f(-x) = 0
    proj.parameters()[1]->value.setZero();
    TemporalFeatures features = random_temporal(2, 6, 14);
    features.tensor.data.row(1) = -features.tensor.data.row(0);
    const TokenBlock block = project_temporal(features, proj);
    CHECK(block.tokens.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("temporal projector is invariant to chunk permutation") {
    TemporalProjector proj(12, 16, 8, 15);
    const TemporalFeatures features = random_temporal(7, 12, 16);

    std::vector<int> perm = {3, 0, 6, 2, 5, 1, 4};
    TemporalFeatures shuffled = features;
    for (int i = 0; i < 7; ++i) shuffled.tensor.data.row(i) = features.tensor.data.row(perm[i]);

    const TokenBlock a = project_temporal(features, proj);
    const TokenBlock b = project_temporal(shuffled, proj);
    CHECK((a.tokens - b.tokens).cwiseAbs().maxCoeff() == 0.0);  // bitwise
}

TEST_CASE("projector gradients match central finite differences") {
    SpatialProjector spatial(SpatialProjectorVariant::vit, 8, 12, 4, 17);
    const SpatialFeatures sp_features = random_spatial(1, 6, 8, 18);
    gradient_check(
        spatial.parameters(),
        [&] {
            Var out = spatial.forward(Var::constant(sp_features.tensor.data), 1);
            return autograd::sum_all(autograd::cwise_mul(out, out));
        },
        4, 19);

    TemporalProjector temporal(10, 4, 12, 20);
    const TemporalFeatures tp_features = random_temporal(5, 10, 21);
    gradient_check(
        temporal.parameters(),
        [&] {
            Var out = temporal.forward(Var::constant(tp_features.tensor.data));
            return autograd::sum_all(autograd::cwise_mul(out, out));
        },
        8, 22);
}

TEST_CASE("mlp ablation variant has no attention parameters") {
    SpatialProjector vit(SpatialProjectorVariant::vit, 16, 8, 4, 23);
    SpatialProjector mlp(SpatialProjectorVariant::mlp, 16, 8, 4, 23);
    CHECK(mlp.parameters().size() == 2);
    CHECK(vit.parameters().size() > mlp.parameters().size());
}

TEST_CASE("projector fingerprints change when weights change") {
    SpatialProjector proj(SpatialProjectorVariant::mlp, 8, 8, 4, 24);
    const std::uint64_t before = proj.fingerprint();
    proj.parameters()[0]->value(0, 0) += 1.0;
    CHECK(proj.fingerprint() != before);
}
