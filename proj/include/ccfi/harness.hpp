#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ccfi/attack.hpp"
#include "ccfi/ir.hpp"
#include "ccfi/pass.hpp"
#include "ccfi/vm.hpp"

namespace ccfi::harness {

/// Parse and typecheck. Throws ir::ParseError, or std::invalid_argument
/// listing the type errors.
ir::Module load_module(std::string_view text);
ir::Module load_module_file(const std::filesystem::path &path);
std::string read_file(const std::filesystem::path &path);

/// Pass plus VM settings, as given on the command line or in a manifest.
struct Settings {
    pass::PassConfig pass = pass::PassConfig::full();
    vm::RunConfig run;
    bool instrument = true;
};

/// Applies `--flag [value]` tokens to `settings`. Understands --seed,
/// --entropy, --mac-table, --type-sig, --crash-mode, --no-stack, --no-fptr,
/// --no-leaf-opt, --reuse-heap, --step-limit and --baseline. Throws
/// std::invalid_argument on anything else.
void apply_flags(Settings &settings, const std::vector<std::string> &tokens);

/// The instrumented module, or the source itself for a baseline build.
/// `--entropy` feeds both the frame pads and the heap allocator.
ir::Module build(const ir::Module &source, const Settings &settings);
vm::RunConfig run_config(const Settings &settings);

// ---------------------------------------------------------------------------
// Scenarios

enum class Expected : std::uint8_t { Detected, Bypassed, Unaffected };
std::string_view to_string(Expected e) noexcept;
std::optional<Expected> parse_expected(std::string_view text) noexcept;

/// Detected: the run ended in a CCFI violation. Unaffected: it halted with
/// the benign run's output. Bypassed: anything else where the output changed
/// or control left the call stack.
Expected classify(const vm::RunResult &attacked, const vm::RunResult &benign);

struct Scenario {
    std::string name;
    std::string description;
    std::string program; // IR text
    std::string attack;  // attack script text
    Expected expected = Expected::Detected;
    unsigned trials = 1;
    Settings settings;
};

/// S1..S8, embedded in the library.
const std::vector<Scenario> &builtin_scenarios();

/// A `.scn` manifest holds `key = value` lines: name, description, program,
/// attack (paths relative to the manifest), expect, trials, flags.
Scenario load_scenario(const std::filesystem::path &manifest);
/// Every `*.scn` in `dir`, sorted by file name.
std::vector<Scenario> load_scenario_dir(const std::filesystem::path &dir);

struct ScenarioOutcome {
    std::string name;
    Expected expected = Expected::Detected;
    Expected observed = Expected::Detected;
    bool pass = false;
    vm::RunResult attacked; // first trial
    vm::RunResult benign;
    /// Attacker-visible snapshots taken (one per attack point plus one at
    /// the end of each run) and key occurrences found across them.
    std::uint64_t snapshots = 0;
    std::uint64_t key_occurrences = 0;
    std::string detail;
};

ScenarioOutcome run_scenario(const Scenario &scenario);

// ---------------------------------------------------------------------------
// Monte-Carlo replay

struct ReplayConfig {
    unsigned trials = 10'000;
    unsigned entropy_bits = 4;
    std::uint64_t first_seed = 1;
    unsigned threads = 0; // 0: hardware concurrency
    Settings settings;    // entropy in here is overridden
};

struct ReplayResult {
    unsigned trials = 0;
    unsigned successes = 0;
    double frequency = 0.0;
    std::vector<std::int64_t> reference_output; // entropy-0 run
};

/// Success for a trial: the attacked run halts with exactly the output of
/// the same attack against an unrandomized (entropy 0) build, i.e. every
/// replayed pair landed on its live slot.
ReplayResult replay_mc(const ir::Module &source, const vm::AttackScript &script,
                       const ReplayConfig &config);

// ---------------------------------------------------------------------------
// Benchmarks

struct CallDelta {
    std::string function;
    std::uint64_t invocations = 0;
    std::int64_t delta_per_call = 0; // instrumented minus baseline steps, per call
    bool empty = false;              // source body is a single `ret`
    friend bool operator==(const CallDelta &, const CallDelta &) = default;
};

struct BenchRow {
    std::string program;
    std::uint64_t baseline_steps = 0;
    std::uint64_t instrumented_steps = 0;
    std::uint64_t mac_ops = 0;
    std::uint64_t checkptr_ops = 0;
    std::uint64_t indirect_calls = 0;
    std::uint64_t calls = 0;
    bool outputs_match = false;
    std::vector<CallDelta> deltas;

    double overhead() const noexcept {
        return baseline_steps == 0 ? 0.0
                                   : static_cast<double>(instrumented_steps) /
                                         static_cast<double>(baseline_steps);
    }
};

struct BenchReport {
    std::vector<BenchRow> rows;
    /// Set when every empty callee across all rows has the same delta.
    std::optional<std::int64_t> empty_call_delta;
    std::size_t empty_callees = 0;
};

BenchRow bench_program(const std::string &name, const ir::Module &source,
                       const Settings &settings);
BenchReport bench(const std::vector<std::pair<std::string, ir::Module>> &programs,
                  const Settings &settings);

} // namespace ccfi::harness
