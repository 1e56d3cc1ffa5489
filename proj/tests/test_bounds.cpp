#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "iscc/bounds.hpp"

using namespace iscc;

namespace {

SystemConfig two_device_system(double a) {
    SystemConfig c;
    c.num_devices = 2;
    c.grad_var_bound = 1.0;
    c.hessian_bound = a;
    c.sense_noise_var = 1.0;
    c.channel_noise_var = 0.1;
    return c;
}

BoundInputs inputs(const SystemConfig& cfg, std::vector<double> b, std::vector<double> p, double eta,
                   double clutter = 1.0) {
    BoundInputs in;
    in.cfg = cfg;
    for (std::size_t k = 0; k < b.size(); ++k) {
        DeviceConfig d;
        d.clutter_var = clutter;
        in.devices.push_back(d);
    }
    in.alloc = RoundAllocation::from_batches(std::move(b), std::move(p),
                                             std::vector<double>(in.devices.size(), 1e9), eta);
    return in;
}

}  // namespace

TEST(VarianceBound, SingleDeviceReducesToSigmaOverB) {
    SystemConfig c;
    c.hessian_bound = 0.0;
    c.channel_noise_var = 0.0;
    auto in = inputs(c, {1.0}, {1.0}, 1.0, 0.0);
    EXPECT_DOUBLE_EQ(variance_bound(in), 1.0);
}

TEST(VarianceBound, HandEvaluatedTwoDevices) {
    // (5/100) * (1 + 4 * (1 + 1)) * 2 + 0.1
    auto in = inputs(two_device_system(2.0), {5, 5}, {1, 1}, 1.0);
    EXPECT_NEAR(variance_bound(in), 1.0, 1e-15);
    // Same setting with A = 1: (5/100) * 3 * 2 + 0.1
    auto in1 = inputs(two_device_system(1.0), {5, 5}, {1, 1}, 1.0);
    EXPECT_NEAR(variance_bound(in1), 0.4, 1e-15);
}

TEST(VarianceBound, DomainErrors) {
    auto in = inputs(two_device_system(1.0), {0, 0}, {1, 1}, 1.0);
    EXPECT_THROW(variance_bound(in), DomainError);
    auto p0 = inputs(two_device_system(1.0), {5, 5}, {0, 1}, 1.0);
    EXPECT_THROW(variance_bound(p0), DomainError);
    auto e0 = inputs(two_device_system(1.0), {5, 5}, {1, 1}, 0.0);
    EXPECT_THROW(variance_bound(e0), DomainError);
}

TEST(ObjectiveP2, EqualsVarianceBoundWhenWeightsFollowBatches) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.1, 10.0);
    for (int rep = 0; rep < 50; ++rep) {
        auto in = inputs(two_device_system(u(rng)), {u(rng) * 10, u(rng) * 10, u(rng) * 10},
                         {u(rng), u(rng), u(rng)}, u(rng), u(rng));
        EXPECT_NEAR(objective_p2(in) / variance_bound(in), 1.0, 1e-12);
    }
}

TEST(ObjectiveP2, HandValues) {
    auto in = inputs(two_device_system(2.0), {5, 5}, {1, 1}, 1.0);
    EXPECT_NEAR(objective_p2(in), 1.0, 1e-15);

    // Single device, no channel noise, bracket 9 (sigma^2 = 1, A^2 (clutter + 0) = 8), b = 10.
    SystemConfig c;
    c.channel_noise_var = 0.0;
    c.sense_noise_var = 0.0;
    c.hessian_bound = 2.0;
    auto one = inputs(c, {10}, {1}, 1.0, 2.0);
    EXPECT_NEAR(objective_p2(one), 0.9, 1e-15);
}

TEST(ObjectiveP2, FreeWeights) {
    auto in = inputs(two_device_system(1.0), {4, 6}, {1, 1}, 2.0);
    in.alloc.batch_fractions = {0.5, 0.5};
    // 0.25 / 4 * 3 + 0.25 / 6 * 3 + 0.05
    EXPECT_NEAR(objective_p2(in), 0.25 * 3 / 4 + 0.25 * 3 / 6 + 0.05, 1e-15);
}

TEST(Monotonicity, FiniteDifferenceSigns) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.5, 5.0);
    for (int rep = 0; rep < 100; ++rep) {
        auto in = inputs(two_device_system(u(rng)), {u(rng) * 10, u(rng) * 10}, {u(rng), u(rng)}, u(rng),
                         u(rng));
        const double base = variance_bound(in);
        auto eta = in;
        eta.alloc.receive_magnitude_sq *= 1.01;
        EXPECT_LT(variance_bound(eta), base);
        for (int k = 0; k < 2; ++k) {
            auto p = in;
            p.alloc.sense_powers[k] *= 1.01;
            EXPECT_LT(variance_bound(p), base);
        }
        // Scaling all batches at fixed proportions.
        auto b = in;
        for (auto& x : b.alloc.batch_sizes) x *= 1.01;
        EXPECT_LT(variance_bound(b), base);
    }
}

TEST(DegradationBound, HandValues) {
    SystemConfig c;
    c.total_rounds = 100;
    c.smoothness = 1.0;
    c.channel_noise_var = 1.0;
    c.hessian_bound = 0.0;
    c.grad_var_bound = 0.0;
    // Bracket = channel term only = 1 / eta = 1.
    auto in = inputs(c, {1}, {1}, 1.0, 0.0);
    in.true_grad_sq_norm = 1.0;
    EXPECT_NEAR(per_round_degradation_lb(in), 0.09, 1e-15);

    c.total_rounds = 1;
    auto one = inputs(c, {1}, {1}, 1.0, 0.0);
    one.cfg.channel_noise_var = 0.0;
    one.true_grad_sq_norm = 2.0;
    EXPECT_NEAR(per_round_degradation_lb(one), 1.0, 1e-15);  // coefficient 0.5
}

TEST(DegradationBound, ZeroEverything) {
    SystemConfig c;
    c.channel_noise_var = 0.0;
    c.hessian_bound = 0.0;
    c.grad_var_bound = 0.0;
    auto in = inputs(c, {3}, {1}, 1.0, 0.0);
    EXPECT_EQ(per_round_degradation_lb(in), 0.0);
}

TEST(DegradationBound, RejectsOtherLearningRates) {
    SystemConfig c;
    c.total_rounds = 4;
    c.smoothness = 2.0;
    auto in = inputs(c, {1}, {1}, 1.0);
    EXPECT_NO_THROW(per_round_degradation_lb(in, 0.25));
    EXPECT_THROW(per_round_degradation_lb(in, 0.3), ValidationError);
}

TEST(ConvergenceBound, HandValue) {
    auto g = convergence_bound_from_terms(1.0, 1.0, {2, 2, 2, 2});
    EXPECT_NEAR(g.g_t_value, 2.0, 1e-15);
}

TEST(ConvergenceBound, ZeroGapZeroNoise) {
    SystemConfig c;
    c.channel_noise_var = 0.0;
    c.hessian_bound = 0.0;
    c.grad_var_bound = 0.0;
    auto in = inputs(c, {3}, {1}, 1.0, 0.0);
    std::vector<RoundAllocation> sched(10, in.alloc);
    EXPECT_EQ(convergence_bound_gt(c, in.devices, sched, 0.0).g_t_value, 0.0);
}

TEST(ConvergenceBound, InverseSqrtLaw) {
    for (double c : {0.3, 1.0, 7.25}) {
        const auto g1 = convergence_bound_from_terms(1.5, 0.8, std::vector<double>(1000, c)).g_t_value;
        const auto g4 = convergence_bound_from_terms(1.5, 0.8, std::vector<double>(4000, c)).g_t_value;
        EXPECT_NEAR(g4 / g1, 0.5, 1e-12);
        EXPECT_NEAR(g1, (2 * 1.5 * 0.8 + c) / std::sqrt(1000.0), 1e-13);
    }
}

TEST(ConvergenceBound, LinearInNoiseTerms) {
    std::vector<double> t{0.5, 1.0, 0.25, 2.0};
    const auto base = convergence_bound_from_terms(1.0, 1.0, t).g_t_value;
    const auto noise_only = convergence_bound_from_terms(1.0, 0.0, t).g_t_value;
    for (auto& x : t) x *= 2;
    const auto doubled = convergence_bound_from_terms(1.0, 1.0, t).g_t_value;
    EXPECT_NEAR(doubled - base, noise_only, 1e-15);
}

TEST(ConvergenceBound, FromScheduleMatchesTerms) {
    auto in = inputs(two_device_system(1.0), {5, 5}, {1, 1}, 1.0);
    std::vector<RoundAllocation> sched(16, in.alloc);
    const auto g = convergence_bound_gt(in.cfg, in.devices, sched, 0.5);
    EXPECT_NEAR(g.g_t_value, (2 * 1.0 * 0.5 + 0.4) / 4.0, 1e-15);
    EXPECT_EQ(g.per_round_noise_terms.size(), 16u);
}
