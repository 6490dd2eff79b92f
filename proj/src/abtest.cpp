#include "askdesk/abtest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <tuple>
#include <unordered_map>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "askdesk/jsonl.hpp"

namespace askdesk::abtest {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double normal_quantile(double p) {
    return boost::math::quantile(boost::math::normal(), p);
}

std::string format_p(double p) {
    if (p < 0.001) return "p < .001";
    if (p < 0.01) return "p < .01";
    if (p < 0.05) return "p < .05";
    return fmt::format("p = {:.3f}", p);
}

}  // namespace

std::string_view to_string(Variant v) {
    return v == Variant::control ? "control" : "treatment";
}

Variant parse_variant(std::string_view text) {
    if (text == "control") return Variant::control;
    if (text == "treatment") return Variant::treatment;
    throw Error("unknown variant: " + std::string(text));
}

std::uint64_t stable_hash(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return splitmix64(h);
}

Variant assign_variant(std::string_view agent_id, const Date& day, std::string_view salt) {
    std::string key;
    key.reserve(salt.size() + agent_id.size() + 12);
    key.append(salt).push_back('\x1f');
    key.append(agent_id).push_back('\x1f');
    key.append(day.to_string());
    return (stable_hash(key) & 1U) == 0 ? Variant::control : Variant::treatment;
}

void ExperimentRecord::validate() const {
    if (no_answer_queries > queries) throw Error("no_answer_queries exceeds queries for " + agent_id);
    if (thumbs_up > feedback_total) throw Error("thumbs_up exceeds feedback_total for " + agent_id);
}

nlohmann::json ExperimentRecord::to_json() const {
    return {{"agent_id", agent_id},   {"day", day.to_string()},
            {"variant", std::string(abtest::to_string(variant))},
            {"queries", queries},     {"no_answer_queries", no_answer_queries},
            {"thumbs_up", thumbs_up}, {"feedback_total", feedback_total}};
}

ExperimentRecord ExperimentRecord::from_json(const nlohmann::json& j) {
    ExperimentRecord r;
    r.agent_id = j.at("agent_id").get<std::string>();
    r.day = Date::parse(j.at("day").get<std::string>());
    r.variant = parse_variant(j.at("variant").get<std::string>());
    r.queries = j.at("queries").get<std::uint64_t>();
    r.no_answer_queries = j.at("no_answer_queries").get<std::uint64_t>();
    r.thumbs_up = j.value("thumbs_up", std::uint64_t{0});
    r.feedback_total = j.value("feedback_total", std::uint64_t{0});
    r.validate();
    return r;
}

std::vector<ExperimentRecord> read_records(std::istream& in) {
    std::vector<ExperimentRecord> out;
    jsonl::for_each_record(in, [&](const nlohmann::json& j, std::size_t) { out.push_back(ExperimentRecord::from_json(j)); });
    return out;
}

std::vector<ExperimentRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    return read_records(in);
}

void write_records(std::ostream& out, std::span<const ExperimentRecord> records) {
    for (const auto& r : records) jsonl::write_record(out, r.to_json());
}

nlohmann::json Exposure::to_json() const {
    return {{"query_id", query_id},
            {"agent_id", agent_id},
            {"day", day.to_string()},
            {"variant", std::string(abtest::to_string(variant))},
            {"no_answer", no_answer}};
}

Exposure Exposure::from_json(const nlohmann::json& j) {
    Exposure e;
    e.query_id = j.at("query_id").get<std::string>();
    e.agent_id = j.at("agent_id").get<std::string>();
    e.day = Date::parse(j.at("day").get<std::string>());
    e.variant = parse_variant(j.at("variant").get<std::string>());
    e.no_answer = j.at("no_answer").get<bool>();
    return e;
}

std::vector<ExperimentRecord> aggregate(std::span<const Exposure> exposures,
                                        std::span<const evalkit::FeedbackEvent> feedback) {
    using Key = std::tuple<std::string, Date, Variant>;
    std::map<Key, ExperimentRecord> units;
    std::unordered_map<std::string, Key> unit_of_query;
    for (const auto& e : exposures) {
        Key key{e.agent_id, e.day, e.variant};
        auto& unit = units[key];
        unit.agent_id = e.agent_id;
        unit.day = e.day;
        unit.variant = e.variant;
        ++unit.queries;
        if (e.no_answer) ++unit.no_answer_queries;
        unit_of_query.emplace(e.query_id, std::move(key));
    }
    for (const auto& f : evalkit::effective_feedback(feedback)) {
        const auto it = unit_of_query.find(f.query_id);
        if (it == unit_of_query.end()) {
            spdlog::warn("feedback for unknown query {} ignored", f.query_id);
            continue;
        }
        auto& unit = units.at(it->second);
        ++unit.feedback_total;
        if (f.thumbs == evalkit::Thumbs::up) ++unit.thumbs_up;
    }
    std::vector<ExperimentRecord> out;
    out.reserve(units.size());
    for (auto& [key, unit] : units) out.push_back(std::move(unit));
    return out;
}

DeltaMethodResult delta_method_variance(std::span<const double> numerators, std::span<const double> denominators) {
    if (numerators.size() != denominators.size()) throw Error("numerators and denominators differ in length");
    const std::size_t n = numerators.size();
    if (n < 2) throw Error("delta method needs at least two units");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += numerators[i];
        my += denominators[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    if (my == 0.0) throw Error("delta method needs a non-zero mean denominator");
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = numerators[i] - mx;
        const double dy = denominators[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    const double dof = static_cast<double>(n - 1);
    sxx /= dof;
    syy /= dof;
    sxy /= dof;
    DeltaMethodResult r;
    r.n_units = n;
    r.ratio_estimate = mx / my;
    const double R = r.ratio_estimate;
    r.variance = std::max(0.0, (sxx - 2.0 * R * sxy + R * R * syy) / (static_cast<double>(n) * my * my));
    r.std_error = std::sqrt(r.variance);
    return r;
}

TestResult ztest(const DeltaMethodResult& control, const DeltaMethodResult& treatment, double alpha,
                 std::string metric_name) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0, 1)");
    TestResult t;
    t.metric_name = std::move(metric_name);
    t.control_value = control.ratio_estimate;
    t.treatment_value = treatment.ratio_estimate;
    t.alpha_used = alpha;
    if (control.ratio_estimate != 0.0)
        t.relative_effect = 100.0 * (treatment.ratio_estimate - control.ratio_estimate) / control.ratio_estimate;
    const double diff = treatment.ratio_estimate - control.ratio_estimate;
    const double se = std::sqrt(control.variance + treatment.variance);
    if (se == 0.0) {
        if (diff == 0.0) {
            t.z_statistic = 0.0;
            t.p_value = 1.0;
        } else {
            spdlog::warn("{}: zero combined variance with unequal ratios; reporting p = 0", t.metric_name);
            t.z_statistic = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
            t.p_value = 0.0;
        }
    } else {
        t.z_statistic = diff / se;
        t.p_value = std::erfc(std::abs(t.z_statistic) / std::sqrt(2.0));
    }
    t.significant = t.p_value < alpha;
    return t;
}

std::string_view metric_name(Metric metric) {
    return metric == Metric::no_answer_rate ? "No Answer Rate" : "Positive Feedback Rate";
}

double metric_alpha(Metric metric) {
    return metric == Metric::no_answer_rate ? kAlphaAllInteractions : kAlphaFeedback;
}

DeltaMethodResult arm_estimate(std::span<const ExperimentRecord> records, Variant arm, Metric metric) {
    std::vector<double> num, den;
    for (const auto& r : records) {
        if (r.variant != arm) continue;
        if (metric == Metric::no_answer_rate) {
            num.push_back(static_cast<double>(r.no_answer_queries));
            den.push_back(static_cast<double>(r.queries));
        } else {
            num.push_back(static_cast<double>(r.thumbs_up));
            den.push_back(static_cast<double>(r.feedback_total));
        }
    }
    return delta_method_variance(num, den);
}

TestResult analyze_metric(std::span<const ExperimentRecord> records, Metric metric) {
    const auto control = arm_estimate(records, Variant::control, metric);
    const auto treatment = arm_estimate(records, Variant::treatment, metric);
    return ztest(control, treatment, metric_alpha(metric), std::string(metric_name(metric)));
}

std::vector<TestResult> analyze(std::span<const ExperimentRecord> records) {
    std::vector<TestResult> out;
    for (Metric m : {Metric::no_answer_rate, Metric::positive_feedback_rate}) {
        try {
            out.push_back(analyze_metric(records, m));
        } catch (const Error& e) {
            spdlog::warn("{} skipped: {}", metric_name(m), e.what());
        }
    }
    return out;
}

std::string format_table(std::span<const TestResult> results) {
    std::string out = fmt::format("{:<24} {:>10} {:>10} {:>9} {:>10}\n", "Metric", "Control", "Treatment", "Effect",
                                  "p-value");
    for (const auto& r : results) {
        const std::string effect = r.relative_effect ? evalkit::format_relative(*r.relative_effect) : "n/a";
        out += fmt::format("{:<24} {:>10.4f} {:>10.4f} {:>9} {:>10}{}\n", r.metric_name, r.control_value,
                           r.treatment_value, effect, format_p(r.p_value),
                           r.significant ? fmt::format("  (significant at {})", r.alpha_used) : "");
    }
    return out;
}

std::uint64_t required_samples_for_rates(double alpha, double power, double p1, double p2,
                                         SampleSizeFormula formula) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error("alpha must lie in (0, 1)");
    if (!(power > 0.0 && power < 1.0)) throw Error("power must lie in (0, 1)");
    if (!(p1 > 0.0 && p1 < 1.0)) throw Error("baseline rate must lie in (0, 1)");
    if (!(p2 > 0.0 && p2 < 1.0)) throw Error("treatment rate must lie in (0, 1)");
    if (p1 == p2) throw Error("effect must be non-zero");
    const double za = normal_quantile(1.0 - alpha / 2.0);
    const double zb = normal_quantile(power);
    const double spread = p1 * (1.0 - p1) + p2 * (1.0 - p2);
    const double delta2 = (p1 - p2) * (p1 - p2);
    double n = 0.0;
    if (formula == SampleSizeFormula::unpooled) {
        n = (za + zb) * (za + zb) * spread / delta2;
    } else {
        const double pbar = 0.5 * (p1 + p2);
        const double term = za * std::sqrt(2.0 * pbar * (1.0 - pbar)) + zb * std::sqrt(spread);
        n = term * term / delta2;
    }
    // Guard against values such as 385.0000000001 from rounding noise.
    return static_cast<std::uint64_t>(std::ceil(n - 1e-9));
}

std::uint64_t required_samples(double alpha, double power, double baseline_rate, double relative_effect,
                               SampleSizeFormula formula) {
    if (relative_effect == 0.0) throw Error("effect must be non-zero");
    const double p2 = baseline_rate * (1.0 + relative_effect);
    if (!(p2 > 0.0 && p2 < 1.0)) throw Error("baseline rate with the effect applied leaves (0, 1)");
    return required_samples_for_rates(alpha, power, baseline_rate, p2, formula);
}

double ks_uniform_pvalue(std::vector<double> samples) {
    if (samples.empty()) throw Error("KS test needs samples");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double x = std::clamp(samples[i], 0.0, 1.0);
        d = std::max({d, static_cast<double>(i + 1) / n - x, x - static_cast<double>(i) / n});
    }
    const double sqrt_n = std::sqrt(n);
    const double lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    if (lambda < 0.2) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1 ? term : -term);
        if (term < 1e-16) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

std::vector<ExperimentRecord> simulate_experiment(const SimulationConfig& config, std::uint64_t seed) {
    std::mt19937_64 rng(splitmix64(seed));
    std::normal_distribution<double> standard(0.0, 1.0);
    std::poisson_distribution<std::uint64_t> volume(config.mean_queries);

    std::vector<Date> days;
    Date d = config.start_day;
    for (std::size_t i = 0; i < config.days; ++i, d = d.next()) days.push_back(d);

    const double sb = config.agent_baseline_sd;
    const double se = config.agent_effect_sd;
    std::vector<ExperimentRecord> records;
    records.reserve(config.agents * config.days);
    for (std::size_t a = 0; a < config.agents; ++a) {
        const std::string agent = "agent-" + std::to_string(a);
        const double base_mult = std::exp(sb * standard(rng) - sb * sb / 2.0);
        const double effect_mult = (1.0 + config.relative_effect) * std::exp(se * standard(rng) - se * se / 2.0);
        const double p_control = std::clamp(config.no_answer_rate * base_mult, 0.0, 1.0);
        const double p_treatment = std::clamp(p_control * effect_mult, 0.0, 1.0);
        const double up_treatment = std::clamp(config.positive_rate * (1.0 + config.feedback_relative_effect), 0.0, 1.0);
        const std::string salt = config.salt + "-" + std::to_string(seed);
        for (const auto& day : days) {
            ExperimentRecord r;
            r.agent_id = agent;
            r.day = day;
            r.variant = assign_variant(agent, day, salt);
            const bool treated = r.variant == Variant::treatment;
            r.queries = volume(rng);
            r.no_answer_queries =
                std::binomial_distribution<std::uint64_t>(r.queries, treated ? p_treatment : p_control)(rng);
            const std::uint64_t answered = r.queries - r.no_answer_queries;
            r.feedback_total = std::binomial_distribution<std::uint64_t>(answered, config.feedback_probability)(rng);
            r.thumbs_up = std::binomial_distribution<std::uint64_t>(
                r.feedback_total, treated ? up_treatment : config.positive_rate)(rng);
            records.push_back(std::move(r));
        }
    }
    return records;
}

SimulationSummary run_simulation(const SimulationConfig& config, std::size_t replicates, std::uint64_t seed,
                                 double alpha, double nominal_coverage) {
    if (replicates == 0) throw Error("need at least one replicate");
    SimulationSummary summary;
    summary.replicates = replicates;
    summary.nominal_coverage = nominal_coverage;
    summary.true_difference = config.no_answer_rate * config.relative_effect;
    const double z = normal_quantile(1.0 - (1.0 - nominal_coverage) / 2.0);
    std::size_t covered = 0;
    for (std::size_t rep = 0; rep < replicates; ++rep) {
        const auto records = simulate_experiment(config, splitmix64(seed ^ splitmix64(rep + 1)));
        const auto control = arm_estimate(records, Variant::control, Metric::no_answer_rate);
        const auto treatment = arm_estimate(records, Variant::treatment, Metric::no_answer_rate);
        const auto test = ztest(control, treatment, alpha);
        summary.p_values.push_back(test.p_value);
        if (test.significant) ++summary.significant;
        const double diff = treatment.ratio_estimate - control.ratio_estimate;
        const double half_width = z * std::sqrt(control.variance + treatment.variance);
        if (std::abs(diff - summary.true_difference) <= half_width) ++covered;
    }
    summary.detection_rate = static_cast<double>(summary.significant) / static_cast<double>(replicates);
    summary.coverage = static_cast<double>(covered) / static_cast<double>(replicates);
    return summary;
}

}  // namespace askdesk::abtest
