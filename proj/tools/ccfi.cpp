// Command-line driver: run, analyze, scenarios, replay-mc, bench, emit-ir.
//
// Exit status: 0 ok, 1 analyzer hazards, 2 CCFI violation, 3 other trap,
// 4 scenario expectation mismatch, 64 usage or input error.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ccfi/analyzer.hpp"
#include "ccfi/harness.hpp"
#include "ccfi/pass.hpp"
#include "ccfi/report.hpp"
#include "ccfi/vm.hpp"

namespace fs = std::filesystem;
using namespace ccfi;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitHazards = 1;
constexpr int kExitViolation = 2;
constexpr int kExitTrap = 3;
constexpr int kExitMismatch = 4;
constexpr int kExitUsage = 64;

struct Options {
    std::optional<std::uint64_t> seed;
    std::optional<unsigned> entropy;
    std::optional<std::string> mac_table;
    std::optional<std::string> crash_mode;
    std::optional<std::uint64_t> step_limit;
    bool type_sig = false;
    bool no_stack = false;
    bool no_fptr = false;
    bool no_leaf_opt = false;
    bool reuse_heap = false;
    bool baseline = false;
    std::string format = "text";

    harness::Settings settings() const {
        std::vector<std::string> t;
        if (seed)
            t.insert(t.end(), {"--seed", std::to_string(*seed)});
        if (entropy)
            t.insert(t.end(), {"--entropy", std::to_string(*entropy)});
        if (mac_table)
            t.insert(t.end(), {"--mac-table", *mac_table});
        if (crash_mode)
            t.insert(t.end(), {"--crash-mode", *crash_mode});
        if (step_limit)
            t.insert(t.end(), {"--step-limit", std::to_string(*step_limit)});
        if (type_sig)
            t.push_back("--type-sig");
        if (no_stack)
            t.push_back("--no-stack");
        if (no_fptr)
            t.push_back("--no-fptr");
        if (no_leaf_opt)
            t.push_back("--no-leaf-opt");
        if (reuse_heap)
            t.push_back("--reuse-heap");
        if (baseline)
            t.push_back("--baseline");
        harness::Settings s;
        harness::apply_flags(s, t);
        return s;
    }
    bool json() const { return format == "json-lines"; }
};

void add_common(CLI::App &app, Options &o) {
    app.add_option("--seed", o.seed, "PRNG seed (key, pads, heap)");
    app.add_option("--entropy", o.entropy, "random pad bits per frame and heap chunk")
        ->check(CLI::Range(0, 16));
    app.add_option("--mac-table", o.mac_table, "exact or direct:<power of two>");
    app.add_option("--crash-mode", o.crash_mode, "trap or zero")
        ->check(CLI::IsMember({"trap", "zero"}));
    app.add_option("--step-limit", o.step_limit, "maximum VM steps");
    app.add_flag("--type-sig", o.type_sig, "bind a signature hash into function pointer classes");
    app.add_flag("--no-stack", o.no_stack, "do not protect return addresses");
    app.add_flag("--no-fptr", o.no_fptr, "do not protect function and method-table pointers");
    app.add_flag("--no-leaf-opt", o.no_leaf_opt, "MAC leaf frames like any other");
    app.add_flag("--reuse-heap", o.reuse_heap, "let the allocator hand out freed chunks again");
    app.add_flag("--baseline", o.baseline, "run the uninstrumented module");
    app.add_option("--format", o.format, "text or json-lines")
        ->check(CLI::IsMember({"text", "json-lines"}));
}

int trap_status(const vm::RunResult &r) {
    if (r.halted())
        return kExitOk;
    return r.ccfi_violation() ? kExitViolation : kExitTrap;
}

void print_run(const vm::RunResult &r, const Options &o) {
    if (o.json()) {
        std::cout << report::to_json(r).dump() << "\n";
        return;
    }
    for (const auto v : r.output)
        std::cout << v << "\n";
    for (const auto &e : r.attack_log)
        std::cerr << "attack " << e.trigger << ": " << e.action << " [" << vm::to_string(e.status)
                  << "] " << e.detail << "\n";
    for (const auto &h : r.hijacks)
        std::cerr << "control transfer off the call stack: " << h << "\n";
    if (r.trap)
        std::cerr << r.trap->describe() << "\n";
    else if (r.exit_code != 0)
        std::cerr << "halted with exit " << r.exit_code << "\n";
}

int cmd_run(const std::string &file, const std::optional<std::string> &attack, bool emit,
            const Options &o) {
    const auto settings = o.settings();
    const ir::Module built = harness::build(harness::load_module_file(file), settings);
    if (emit)
        std::cout << ir::print_module(built);
    vm::AttackScript script;
    if (attack)
        script = vm::parse_attack_script(harness::read_file(*attack));
    const vm::RunResult r = vm::run(built, script, harness::run_config(settings));
    print_run(r, o);
    return trap_status(r);
}

int cmd_emit(const std::string &file, const Options &o) {
    std::cout << ir::print_module(
        harness::build(harness::load_module_file(file), o.settings()));
    return kExitOk;
}

int cmd_analyze(const std::string &file, const Options &o) {
    const auto hazards = analysis::analyze_module(harness::load_module_file(file));
    for (const auto &h : hazards) {
        if (o.json()) {
            std::cout << report::to_json(h).dump() << "\n";
            continue;
        }
        std::cout << file << ":" << h.line << ": " << analysis::to_string(h.severity()) << ": "
                  << analysis::to_string(h.kind) << " in @" << h.function << "#" << h.index
                  << ": " << h.note << "\n";
        if (h.kind == analysis::HazardKind::RawCopyUntyped)
            std::cout << "  fix: " << analysis::suggest_fix(h) << "\n";
    }
    if (!o.json())
        std::cout << hazards.size() << " hazard(s)\n";
    return analysis::has_warnings(hazards) ? kExitHazards : kExitOk;
}

int cmd_scenarios(const std::optional<std::string> &dir, bool user_only, const Options &o) {
    std::vector<harness::Scenario> suite;
    if (!user_only)
        suite = harness::builtin_scenarios();
    if (dir) {
        auto extra = harness::load_scenario_dir(*dir);
        suite.insert(suite.end(), extra.begin(), extra.end());
    }
    bool all = true;
    for (const auto &sc : suite) {
        const auto out = harness::run_scenario(sc);
        all = all && out.pass;
        if (o.json()) {
            std::cout << report::to_json(out).dump() << "\n";
            continue;
        }
        std::cout << (out.pass ? "PASS " : "FAIL ") << out.name << "  expected "
                  << harness::to_string(out.expected) << ", observed "
                  << harness::to_string(out.observed) << "  (" << out.detail << ")\n";
    }
    return all ? kExitOk : kExitMismatch;
}

int cmd_replay(const std::string &program, const std::string &attack, unsigned trials,
               unsigned threads, const Options &o) {
    harness::ReplayConfig cfg;
    cfg.settings = o.settings();
    cfg.trials = trials;
    cfg.entropy_bits = o.entropy.value_or(4);
    cfg.first_seed = o.seed.value_or(1);
    cfg.threads = threads;
    const auto r = harness::replay_mc(harness::load_module_file(program),
                                      vm::parse_attack_script(harness::read_file(attack)), cfg);
    if (o.json())
        std::cout << report::to_json(r, cfg.entropy_bits).dump() << "\n";
    else
        std::cout << "entropy " << cfg.entropy_bits << ": " << r.successes << "/" << r.trials
                  << " replays landed, frequency " << r.frequency << "\n";
    return kExitOk;
}

int cmd_bench(const std::string &dir, const Options &o) {
    std::vector<fs::path> files;
    for (const auto &e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".ir")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<std::pair<std::string, ir::Module>> programs;
    for (const auto &f : files)
        programs.emplace_back(f.filename().string(), harness::load_module_file(f));
    const auto rep = harness::bench(programs, o.settings());
    for (const auto &row : rep.rows) {
        if (o.json()) {
            std::cout << report::to_json(row).dump() << "\n";
            continue;
        }
        std::cout << row.program << ": baseline " << row.baseline_steps << " steps, instrumented "
                  << row.instrumented_steps << " (x" << row.overhead() << "), " << row.mac_ops
                  << " MAC ops, " << row.checkptr_ops << " checkptr / " << row.indirect_calls
                  << " indirect calls" << (row.outputs_match ? "" : ", OUTPUT DIFFERS") << "\n";
        for (const auto &d : row.deltas)
            std::cout << "  @" << d.function << (d.empty ? " (empty)" : "") << ": +"
                      << d.delta_per_call << " steps/call over " << d.invocations << " calls\n";
    }
    if (!o.json()) {
        if (rep.empty_call_delta)
            std::cout << "empty-callee overhead: " << *rep.empty_call_delta << " steps/call across "
                      << rep.empty_callees << " callees\n";
        else if (rep.empty_callees > 0)
            std::cout << "empty-callee overhead is NOT constant\n";
    }
    return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"ccfi: MAC-based control-flow integrity for a toy IR"};
    app.require_subcommand(1);
    Options o;

    std::string file, attack_file;
    std::optional<std::string> attack, suite_dir;
    bool emit = false, user_only = false;
    unsigned trials = 10'000, threads = 0;

    auto *run = app.add_subcommand("run", "instrument and execute a module");
    run->add_option("file", file, "module (.ir)")->required()->check(CLI::ExistingFile);
    run->add_option("--attack", attack, "attack script (.atk)")->check(CLI::ExistingFile);
    run->add_flag("--emit-ir", emit, "print the module that runs");
    add_common(*run, o);

    auto *analyze = app.add_subcommand("analyze", "report constructs that defeat automatic MACing");
    analyze->add_option("file", file, "module (.ir)")->required()->check(CLI::ExistingFile);
    add_common(*analyze, o);

    auto *scen = app.add_subcommand("scenarios", "run the attack scenario suite");
    scen->add_option("dir", suite_dir, "directory of extra .scn manifests")
        ->check(CLI::ExistingDirectory);
    scen->add_flag("--user-only", user_only, "skip the built-in scenarios");
    add_common(*scen, o);

    auto *mc = app.add_subcommand("replay-mc", "estimate same-address replay success");
    mc->add_option("program", file, "module (.ir)")->required()->check(CLI::ExistingFile);
    mc->add_option("attack", attack_file, "attack script (.atk)")
        ->required()
        ->check(CLI::ExistingFile);
    mc->add_option("--trials", trials, "number of seeds")->check(CLI::PositiveNumber);
    mc->add_option("--threads", threads, "worker threads (0: all cores)");
    add_common(*mc, o);

    auto *bench = app.add_subcommand("bench", "step and MAC-op accounting, baseline vs protected");
    bench->add_option("dir", file, "directory of .ir programs")
        ->required()
        ->check(CLI::ExistingDirectory);
    add_common(*bench, o);

    auto *emit_ir = app.add_subcommand("emit-ir", "print the instrumented module");
    emit_ir->add_option("file", file, "module (.ir)")->required()->check(CLI::ExistingFile);
    add_common(*emit_ir, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    try {
        if (run->parsed())
            return cmd_run(file, attack, emit, o);
        if (analyze->parsed())
            return cmd_analyze(file, o);
        if (scen->parsed())
            return cmd_scenarios(suite_dir, user_only, o);
        if (mc->parsed())
            return cmd_replay(file, attack_file, trials, threads, o);
        if (bench->parsed())
            return cmd_bench(file, o);
        if (emit_ir->parsed())
            return cmd_emit(file, o);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
