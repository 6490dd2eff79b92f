#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "askdesk/abtest.hpp"

using namespace askdesk;
using namespace askdesk::abtest;

namespace {

double sample_variance(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return ss / static_cast<double>(v.size() - 1);
}

double bootstrap_ratio_variance(const std::vector<double>& x, const std::vector<double>& y, std::size_t resamples,
                                std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    std::vector<double> ratios;
    ratios.reserve(resamples);
    for (std::size_t b = 0; b < resamples; ++b) {
        double sx = 0.0, sy = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const auto j = pick(rng);
            sx += x[j];
            sy += y[j];
        }
        ratios.push_back(sx / sy);
    }
    return sample_variance(ratios);
}

DeltaMethodResult fixed(double ratio, double variance) {
    return {ratio, variance, std::sqrt(variance), 100};
}

}  // namespace

TEST_CASE("assignment is deterministic and depends on the day") {
    const Date day(2024, 1, 8);
    CHECK(assign_variant("agent-1", day, "exp") == assign_variant("agent-1", day, "exp"));
    bool differs = false;
    Date d = day;
    for (int i = 0; i < 30 && !differs; ++i, d = d.next())
        differs = assign_variant("agent-1", d, "exp") != assign_variant("agent-1", day, "exp");
    CHECK(differs);
    CHECK(stable_hash("abc") == stable_hash("abc"));
    CHECK(stable_hash("abc") != stable_hash("abd"));
}

TEST_CASE("assignment splits 10,000 agent-days evenly") {
    std::size_t treatment = 0, agree = 0, n = 0;
    Date day(2024, 1, 1);
    for (int d = 0; d < 50; ++d, day = day.next()) {
        for (int a = 0; a < 200; ++a) {
            const auto id = "agent-" + std::to_string(a);
            const auto v = assign_variant(id, day, "salt-one");
            treatment += v == Variant::treatment;
            agree += v == assign_variant(id, day, "salt-two");
            ++n;
        }
    }
    const double share = static_cast<double>(treatment) / static_cast<double>(n);
    CHECK(share == doctest::Approx(0.5).epsilon(0.04));
    // Chi-square with one degree of freedom against the even split.
    const double half = static_cast<double>(n) / 2.0;
    const double c = static_cast<double>(n - treatment);
    const double chi2 = (c - half) * (c - half) / half + (treatment - half) * (treatment - half) / half;
    CHECK(std::erfc(std::sqrt(chi2 / 2.0)) > 0.01);

    const double agreement = static_cast<double>(agree) / static_cast<double>(n);
    CHECK(agreement > 0.48);
    CHECK(agreement < 0.52);
}

TEST_CASE("delta method closed forms") {
    const std::vector<double> x = {1, 4, 2, 7, 3, 5};
    const std::vector<double> constant(6, 10.0);
    const auto r = delta_method_variance(x, constant);
    CHECK(r.ratio_estimate == doctest::Approx(22.0 / 60.0));
    CHECK(r.variance == doctest::Approx(sample_variance(x) / (6 * 100.0)));
    CHECK(r.std_error == doctest::Approx(std::sqrt(r.variance)));
    CHECK(r.n_units == 6);

    const auto same = delta_method_variance(x, x);
    CHECK(same.ratio_estimate == 1.0);
    CHECK(same.variance == doctest::Approx(0.0).epsilon(1e-15));

    CHECK_THROWS_AS(delta_method_variance(std::vector<double>{1.0}, std::vector<double>{1.0}), Error);
    CHECK_THROWS_AS(delta_method_variance(std::vector<double>{1, 2}, std::vector<double>{0, 0}), Error);
    CHECK_THROWS_AS(delta_method_variance(std::vector<double>{1, 2}, std::vector<double>{1}), Error);
}

TEST_CASE("delta method is order invariant and scales as 1/n") {
    std::mt19937_64 rng(3);
    std::vector<double> x, y;
    for (int i = 0; i < 50; ++i) {
        y.push_back(5 + static_cast<double>(rng() % 20));
        x.push_back(static_cast<double>(rng() % static_cast<std::uint64_t>(y.back() + 1)));
    }
    const auto base = delta_method_variance(x, y);

    auto rx = x, ry = y;
    std::reverse(rx.begin(), rx.end());
    std::reverse(ry.begin(), ry.end());
    CHECK(delta_method_variance(rx, ry).variance == doctest::Approx(base.variance).epsilon(1e-12));

    // Four copies: sums of squares grow 4x, divisors go from 49 to 199, n from 50 to 200.
    std::vector<double> x4, y4;
    for (int c = 0; c < 4; ++c) x4.insert(x4.end(), x.begin(), x.end()), y4.insert(y4.end(), y.begin(), y.end());
    const double expected = base.variance * 49.0 / 199.0;
    CHECK(delta_method_variance(x4, y4).variance == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("delta method agrees with a bootstrap on simulated agent-days") {
    SimulationConfig config;
    config.agents = 200;
    config.days = 10;
    const auto records = simulate_experiment(config, 21);
    std::vector<double> x, y;
    for (const auto& r : records) {
        if (r.variant != Variant::control || r.queries == 0) continue;
        x.push_back(static_cast<double>(r.no_answer_queries));
        y.push_back(static_cast<double>(r.queries));
    }
    REQUIRE(x.size() > 500);
    const double delta = delta_method_variance(x, y).variance;
    const double boot = bootstrap_ratio_variance(x, y, 2000, 5);
    CHECK(std::abs(delta - boot) / boot < 0.10);
}

TEST_CASE("ztest") {
    const auto null = ztest(fixed(0.25, 0.0), fixed(0.25, 0.0), 0.01, "No Answer Rate");
    CHECK(null.p_value == 1.0);
    CHECK_FALSE(null.significant);
    CHECK(*null.relative_effect == 0.0);

    const auto degenerate = ztest(fixed(0.25, 0.0), fixed(0.2, 0.0), 0.01);
    CHECK(degenerate.p_value == 0.0);
    CHECK(degenerate.significant);

    // z = -0.05 / sqrt(2 * 0.0004) with p = erfc(|z| / sqrt 2).
    const auto t = ztest(fixed(0.25, 0.0004), fixed(0.2, 0.0004), 0.05);
    const double z = -0.05 / std::sqrt(0.0008);
    CHECK(t.z_statistic == doctest::Approx(z));
    CHECK(t.p_value == doctest::Approx(0.077100).epsilon(1e-4));
    CHECK_FALSE(t.significant);
    CHECK(*t.relative_effect == doctest::Approx(-20.0));
    CHECK(ztest(fixed(0.25, 0.0004), fixed(0.2, 0.0004), 0.1).significant);

    CHECK_FALSE(ztest(fixed(0.0, 0.01), fixed(0.1, 0.01), 0.05).relative_effect.has_value());
    CHECK_THROWS_AS(ztest(fixed(0.1, 0.01), fixed(0.1, 0.01), 0.0), Error);
    CHECK(metric_alpha(Metric::no_answer_rate) == 0.01);
    CHECK(metric_alpha(Metric::positive_feedback_rate) == 0.05);
}

TEST_CASE("required samples") {
    CHECK(required_samples_for_rates(0.05, 0.8, 0.5, 0.6) == 388);
    CHECK(required_samples_for_rates(0.05, 0.8, 0.5, 0.6, SampleSizeFormula::unpooled) == 385);
    CHECK(required_samples(0.05, 0.8, 0.5, 0.2) == 388);

    std::uint64_t previous = required_samples(0.01, 0.8, 0.25, -0.05);
    for (double effect : {-0.08, -0.119, -0.2, -0.4}) {
        const auto n = required_samples(0.01, 0.8, 0.25, effect);
        CHECK(n < previous);
        previous = n;
    }

    // With power 0.5, z_power = 0 and only the alpha quantile remains.
    const double za = 1.959963984540054;
    const double unpooled = za * za * (0.25 + 0.24) / 0.01;
    CHECK(required_samples_for_rates(0.05, 0.5, 0.5, 0.6, SampleSizeFormula::unpooled) ==
          static_cast<std::uint64_t>(std::ceil(unpooled)));

    CHECK_THROWS_AS(required_samples(0.05, 0.8, 0.5, 1.5), Error);
    CHECK_THROWS_AS(required_samples(0.05, 0.8, 0.5, 0.0), Error);
    CHECK_THROWS_AS(required_samples(1.5, 0.8, 0.5, 0.1), Error);
}

TEST_CASE("ks_uniform_pvalue") {
    std::vector<double> grid;
    for (int i = 0; i < 1000; ++i) grid.push_back((i + 0.5) / 1000.0);
    CHECK(ks_uniform_pvalue(grid) > 0.99);

    std::vector<double> squeezed;
    for (int i = 0; i < 1000; ++i) squeezed.push_back(0.5 * (i + 0.5) / 1000.0);
    CHECK(ks_uniform_pvalue(squeezed) < 1e-6);

    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> random;
    for (int i = 0; i < 2000; ++i) random.push_back(u(rng));
    CHECK(ks_uniform_pvalue(random) > 0.01);
    CHECK_THROWS(ks_uniform_pvalue({}));
}

TEST_CASE("aggregate joins exposures with effective feedback") {
    const Date d1(2024, 1, 8), d2(2024, 1, 9);
    const std::vector<Exposure> exposures = {
        {"q1", "a1", d1, Variant::control, false}, {"q2", "a1", d1, Variant::control, true},
        {"q3", "a1", d2, Variant::treatment, false}, {"q4", "a2", d1, Variant::treatment, false}};
    const std::vector<evalkit::FeedbackEvent> feedback = {
        {"a1", d1, "control", evalkit::Thumbs::down, "q1"},
        {"a1", d1, "control", evalkit::Thumbs::up, "q1"},
        {"a1", d2, "treatment", evalkit::Thumbs::down, "q3"},
        {"a9", d2, "treatment", evalkit::Thumbs::up, "unknown"}};
    const auto records = aggregate(exposures, feedback);
    REQUIRE(records.size() == 3);
    std::uint64_t queries = 0, none = 0, up = 0, total = 0;
    for (const auto& r : records) {
        queries += r.queries, none += r.no_answer_queries, up += r.thumbs_up, total += r.feedback_total;
        if (r.agent_id == "a1" && r.day == d1) {
            CHECK(r.variant == Variant::control);
            CHECK(r.queries == 2);
            CHECK(r.thumbs_up == 1);
            CHECK(r.feedback_total == 1);
        }
    }
    CHECK(queries == 4);
    CHECK(none == 1);
    CHECK(up == 1);
    CHECK(total == 2);
}

TEST_CASE("records round-trip and validate") {
    const std::vector<ExperimentRecord> records = {{"a1", Date(2024, 1, 8), Variant::treatment, 12, 3, 2, 2}};
    std::stringstream out;
    write_records(out, records);
    const auto back = read_records(out);
    REQUIRE(back.size() == 1);
    CHECK(back[0].variant == Variant::treatment);
    CHECK(back[0].no_answer_queries == 3);

    ExperimentRecord bad = records[0];
    bad.no_answer_queries = 20;
    CHECK_THROWS_AS(bad.validate(), Error);
    bad = records[0];
    bad.thumbs_up = 3;
    CHECK_THROWS_AS(bad.validate(), Error);
    CHECK_THROWS_AS(parse_variant("neither"), Error);

    const auto e = Exposure::from_json(Exposure{"q", "a", Date(2024, 2, 1), Variant::control, true}.to_json());
    CHECK(e.no_answer);
    CHECK(e.day == Date(2024, 2, 1));
}

TEST_CASE("analyze and format a simulated experiment") {
    SimulationConfig config;
    config.agents = 300;
    config.days = 21;
    const auto results = analyze(simulate_experiment(config, 4));
    REQUIRE(results.size() == 2);
    CHECK(results[0].metric_name == "No Answer Rate");
    CHECK(results[0].alpha_used == 0.01);
    CHECK(results[1].alpha_used == 0.05);
    CHECK(*results[0].relative_effect < 0.0);
    CHECK(results[0].significant == (results[0].p_value < 0.01));

    const auto table = format_table(results);
    CHECK(table.find("No Answer Rate") != std::string::npos);
    CHECK(table.find("Positive Feedback Rate") != std::string::npos);
    CHECK(table.find("p-value") != std::string::npos);

    std::vector<ExperimentRecord> one_arm = {{"a", Date(2024, 1, 8), Variant::control, 5, 1, 0, 0},
                                             {"b", Date(2024, 1, 8), Variant::control, 5, 2, 0, 0}};
    CHECK(analyze(one_arm).empty());
}

TEST_CASE("simulation is seeded and calibrated") {
    SimulationConfig config;
    config.agents = 100;
    config.days = 10;
    const auto a = simulate_experiment(config, 9);
    const auto b = simulate_experiment(config, 9);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].no_answer_queries == b[i].no_answer_queries);

    config.relative_effect = 0.0;
    const auto null = run_simulation(config, 400, 13);
    CHECK(null.p_values.size() == 400);
    CHECK(null.detection_rate < 0.04);
    CHECK(ks_uniform_pvalue(null.p_values) > 0.01);
    CHECK(null.coverage > 0.9);
}
