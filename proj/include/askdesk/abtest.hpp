#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "askdesk/date.hpp"
#include "askdesk/evalkit.hpp"

namespace askdesk::abtest {

enum class Variant { control, treatment };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);

inline constexpr double kAlphaAllInteractions = 0.01;
inline constexpr double kAlphaFeedback = 0.05;

// FNV-1a 64 followed by a splitmix64 finalizer.
std::uint64_t stable_hash(std::string_view bytes);

/// Low bit of stable_hash(salt \x1f agent_id \x1f YYYY-MM-DD): 0 is control.
Variant assign_variant(std::string_view agent_id, const Date& day, std::string_view salt);

/// Per agent-day aggregate, the unit of randomization and of analysis.
struct ExperimentRecord {
    std::string agent_id;
    Date day;
    Variant variant = Variant::control;
    std::uint64_t queries = 0;
    std::uint64_t no_answer_queries = 0;
    std::uint64_t thumbs_up = 0;
    std::uint64_t feedback_total = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentRecord from_json(const nlohmann::json& j);
};

std::vector<ExperimentRecord> read_records(std::istream& in);
std::vector<ExperimentRecord> read_records(const std::filesystem::path& path);
void write_records(std::ostream& out, std::span<const ExperimentRecord> records);

/// One answered (or unanswered) query as logged by the gateway.
struct Exposure {
    std::string query_id;
    std::string agent_id;
    Date day;
    Variant variant = Variant::control;
    bool no_answer = false;

    nlohmann::json to_json() const;
    static Exposure from_json(const nlohmann::json& j);
};

// Groups exposures by (agent, day, variant) and joins the effective feedback
// (last write per query_id) onto them. Feedback for unknown queries is ignored.
std::vector<ExperimentRecord> aggregate(std::span<const Exposure> exposures,
                                        std::span<const evalkit::FeedbackEvent> feedback);

struct DeltaMethodResult {
    double ratio_estimate = 0.0;
    double variance = 0.0;
    double std_error = 0.0;
    std::size_t n_units = 0;
};

/// Ratio of means with its first-order variance:
/// (S_x^2 - 2 R S_xy + R^2 S_y^2) / (n Ybar^2), sample (co)variances with n - 1.
DeltaMethodResult delta_method_variance(std::span<const double> numerators, std::span<const double> denominators);

struct TestResult {
    std::string metric_name;
    double control_value = 0.0;
    double treatment_value = 0.0;
    std::optional<double> relative_effect;  // percent; absent for a zero control
    double z_statistic = 0.0;
    double p_value = 1.0;
    double alpha_used = kAlphaAllInteractions;
    bool significant = false;
};

/// Two-sided z-test on the difference of two independent ratio estimates.
TestResult ztest(const DeltaMethodResult& control, const DeltaMethodResult& treatment, double alpha,
                 std::string metric_name = {});

enum class Metric { no_answer_rate, positive_feedback_rate };

std::string_view metric_name(Metric metric);
double metric_alpha(Metric metric);

// Splits records by arm and runs the delta method on the metric's numerator
// and denominator.
DeltaMethodResult arm_estimate(std::span<const ExperimentRecord> records, Variant arm, Metric metric);

TestResult analyze_metric(std::span<const ExperimentRecord> records, Metric metric);

// Both metrics; a metric is skipped (with a warning) when an arm has fewer
// than two units or a zero mean denominator.
std::vector<TestResult> analyze(std::span<const ExperimentRecord> records);

// Metric, effect, p-value rows.
std::string format_table(std::span<const TestResult> results);

enum class SampleSizeFormula { pooled, unpooled };

/// Per-arm sample size to detect p1 -> p2 with a two-sided test.
/// unpooled: (z_a + z_b)^2 (p1 q1 + p2 q2) / (p1 - p2)^2
/// pooled:   (z_a sqrt(2 pbar qbar) + z_b sqrt(p1 q1 + p2 q2))^2 / (p1 - p2)^2
std::uint64_t required_samples_for_rates(double alpha, double power, double p1, double p2,
                                         SampleSizeFormula formula = SampleSizeFormula::pooled);

// p2 = baseline_rate * (1 + relative_effect).
std::uint64_t required_samples(double alpha, double power, double baseline_rate, double relative_effect,
                               SampleSizeFormula formula = SampleSizeFormula::pooled);

/// Asymptotic Kolmogorov-Smirnov p-value for samples against Uniform(0, 1).
double ks_uniform_pvalue(std::vector<double> samples);

// ---------------------------------------------------------------------------
// Simulation

struct SimulationConfig {
    std::size_t agents = 300;
    std::size_t days = 21;
    Date start_day{2024, 1, 8};
    double mean_queries = 15.0;  // Poisson per agent-day
    double no_answer_rate = 0.25;
    double relative_effect = -0.119;  // on the no-answer rate
    double feedback_probability = 0.1;  // per answered query
    double positive_rate = 0.8;
    double feedback_relative_effect = 0.0;
    // Log-scale spread of per-agent baseline rates.
    double agent_baseline_sd = 0.0;
    // Log-scale spread of per-agent treatment multipliers; breaks independence
    // between an agent's units.
    double agent_effect_sd = 0.0;
    std::string salt = "sim";
};

// Agents and their effects are drawn anew from the seed.
std::vector<ExperimentRecord> simulate_experiment(const SimulationConfig& config, std::uint64_t seed);

struct SimulationSummary {
    std::size_t replicates = 0;
    std::size_t significant = 0;
    double detection_rate = 0.0;
    std::vector<double> p_values;
    // Share of replicates whose confidence interval for the no-answer rate
    // difference contains the population difference.
    double coverage = 0.0;
    double nominal_coverage = 0.95;
    double true_difference = 0.0;
};

/// Replicates the experiment and tests the no-answer rate in each.
SimulationSummary run_simulation(const SimulationConfig& config, std::size_t replicates, std::uint64_t seed,
                                 double alpha = kAlphaAllInteractions, double nominal_coverage = 0.95);

}  // namespace askdesk::abtest
