#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <random>
#include <thread>

#include "cmsnet/bench.hpp"

using namespace cmsnet;

TEST_CASE("type-7 quantiles interpolate between order statistics") {
    std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
    REQUIRE(quantile(v, 0.0) == 1.0);
    REQUIRE(quantile(v, 1.0) == 4.0);
    REQUIRE(quantile(v, 0.5) == 2.5);
    REQUIRE(quantile(v, 0.25) == 1.75);
    REQUIRE(quantile(v, 0.75) == 3.25);

    std::vector<double> odd = {10.0, 20.0, 30.0};
    REQUIRE(quantile(odd, 0.5) == 20.0);
    REQUIRE_THROWS_AS(quantile({}, 0.5), config_error);
}

TEST_CASE("boxplot fences flag outliers and clamp whiskers to the data") {
    std::vector<double> times = {1, 2, 3, 4, 5, 6, 7, 8, 9, 100};
    LatencyStats s = boxplot_params(times);
    REQUIRE(s.iterations == 10);
    REQUIRE(s.min == 1.0);
    REQUIRE(s.max == 100.0);
    REQUIRE(s.q1 == 3.25);
    REQUIRE(s.median == 5.5);
    REQUIRE(s.q3 == 7.75);
    // fences at q1-1.5*iqr = -3.5 and q3+1.5*iqr = 14.5
    REQUIRE(s.outliers == std::vector<double>{100.0});
    REQUIRE(s.whisker_lo == 1.0);
    REQUIRE(s.whisker_hi == 9.0);  // largest value inside the fence
    REQUIRE_THAT(s.mean_latency, Catch::Matchers::WithinAbs(14.5, 1e-12));
    REQUIRE_THAT(s.mean_fps, Catch::Matchers::WithinAbs(1.0 / 14.5, 1e-12));
}

TEST_CASE("boxplot statistics are invariant under permutation") {
    std::mt19937 rng(5);
    std::vector<double> times(200);
    std::lognormal_distribution<double> dist(-3.0, 0.4);
    for (auto& t : times) t = dist(rng);
    std::vector<double> shuffled = times;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    LatencyStats a = boxplot_params(times);
    LatencyStats b = boxplot_params(shuffled);
    REQUIRE(a.q1 == b.q1);
    REQUIRE(a.median == b.median);
    REQUIRE(a.q3 == b.q3);
    REQUIRE(a.min == b.min);
    REQUIRE(a.max == b.max);
    REQUIRE(a.whisker_lo == b.whisker_lo);
    REQUIRE(a.whisker_hi == b.whisker_hi);
    REQUIRE(a.sd_pct == b.sd_pct);
    auto oa = a.outliers, ob = b.outliers;
    std::sort(ob.begin(), ob.end());
    std::sort(oa.begin(), oa.end());
    REQUIRE(oa == ob);
    // summation order is fixed by sorting, so even the mean matches exactly
    REQUIRE(a.mean_latency == b.mean_latency);
}

TEST_CASE("constant series has zero spread") {
    LatencyStats s = boxplot_params(std::vector<double>(50, 0.25));
    REQUIRE(s.sd_pct == 0.0);
    REQUIRE(s.q1 == 0.25);
    REQUIRE(s.q3 == 0.25);
    REQUIRE(s.outliers.empty());
}

TEST_CASE("time_inference tracks a sleep-stub workload") {
    const double sleep_s = 0.005;
    LatencyStats s = time_inference(
        [&] {
            std::this_thread::sleep_for(
                std::chrono::duration<double>(sleep_s));
        },
        60, 3);
    REQUIRE(s.iterations == 60);
    REQUIRE(static_cast<int>(s.times.size()) == 60);
    // sleeps only overshoot; allow 10% scheduling slack
    REQUIRE(s.mean_latency >= sleep_s);
    REQUIRE(s.mean_latency < sleep_s * 1.10);
    REQUIRE(s.mean_fps > 1.0 / (sleep_s * 1.10));
    REQUIRE_THROWS_AS(time_inference([] {}, 0, 0), config_error);
}

TEST_CASE("reaction distance follows D = V / (3.6 * FPS)") {
    REQUIRE_THAT(reaction_distance(30.0, 21.0),
                 Catch::Matchers::WithinAbs(0.3968, 0.0005));
    REQUIRE_THAT(reaction_distance(60.0, 21.0),
                 Catch::Matchers::WithinAbs(0.7937, 0.001));
    REQUIRE(reaction_distance(0.0, 10.0) == 0.0);
    REQUIRE_THAT(reaction_latency_s(21.0) * 1000.0,
                 Catch::Matchers::WithinAbs(47.6, 0.1));
    REQUIRE_THROWS_AS(reaction_distance(30.0, 0.0), config_error);
    REQUIRE_THROWS_AS(reaction_distance(-1.0, 10.0), config_error);
    REQUIRE_THROWS_AS(reaction_latency_s(0.0), config_error);
}
