#include "ccfi/harness.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "ccfi/typecheck.hpp"

namespace ccfi::harness {

namespace fs = std::filesystem;

std::string read_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ir::Module load_module(std::string_view text) {
    ir::Module m = ir::parse_module(text);
    const ir::TypeInfo info = ir::typecheck(m);
    if (!info.ok()) {
        std::string msg = "type errors:";
        for (const auto &d : info.diagnostics)
            msg += "\n  line " + std::to_string(d.line) + " (@" + d.function + "): " + d.message;
        throw std::invalid_argument(msg);
    }
    return m;
}

ir::Module load_module_file(const fs::path &path) {
    try {
        return load_module(read_file(path));
    } catch (const ir::ParseError &e) {
        throw std::invalid_argument(path.string() + ":" + e.what());
    } catch (const std::invalid_argument &e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

namespace {

std::uint64_t to_u64(const std::string &flag, const std::string &v) {
    try {
        std::size_t used = 0;
        const auto n = std::stoull(v, &used, 0);
        if (used == v.size())
            return n;
    } catch (const std::exception &) {
    }
    throw std::invalid_argument(flag + " expects an unsigned integer, got '" + v + "'");
}

} // namespace

void apply_flags(Settings &s, const std::vector<std::string> &tokens) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::string &f = tokens[i];
        auto value = [&]() -> const std::string & {
            if (i + 1 >= tokens.size())
                throw std::invalid_argument(f + " needs a value");
            return tokens[++i];
        };
        if (f == "--seed")
            s.run.seed = to_u64(f, value());
        else if (f == "--entropy") {
            const auto e = to_u64(f, value());
            if (e > pass::PassConfig::kMaxEntropyBits)
                throw std::invalid_argument("--entropy must be at most 16");
            s.pass.entropy_bits = static_cast<unsigned>(e);
        } else if (f == "--mac-table")
            s.run.mac_table = MacTableConfig::parse(value());
        else if (f == "--type-sig")
            s.pass.type_sig_classes = true;
        else if (f == "--crash-mode") {
            const std::string &v = value();
            if (v == "trap")
                s.run.crash_mode = vm::CrashMode::Trap;
            else if (v == "zero")
                s.run.crash_mode = vm::CrashMode::Zero;
            else
                throw std::invalid_argument("--crash-mode expects trap or zero");
        } else if (f == "--no-stack")
            s.pass.protect_stack = false;
        else if (f == "--no-fptr")
            s.pass.protect_pointers = false;
        else if (f == "--no-leaf-opt")
            s.pass.leaf_opt = false;
        else if (f == "--reuse-heap")
            s.run.reuse_heap = true;
        else if (f == "--step-limit")
            s.run.step_limit = to_u64(f, value());
        else if (f == "--baseline")
            s.instrument = false;
        else
            throw std::invalid_argument("unknown flag '" + f + "'");
    }
}

ir::Module build(const ir::Module &source, const Settings &settings) {
    if (!settings.instrument)
        return source;
    return pass::instrument_module(source, settings.pass);
}

vm::RunConfig run_config(const Settings &settings) {
    vm::RunConfig c = settings.run;
    c.heap_entropy_bits = settings.pass.entropy_bits;
    return c;
}

// ---------------------------------------------------------------------------
// Scenarios

std::string_view to_string(Expected e) noexcept {
    switch (e) {
    case Expected::Detected: return "detected";
    case Expected::Bypassed: return "bypassed";
    case Expected::Unaffected: return "unaffected";
    }
    return "?";
}

std::optional<Expected> parse_expected(std::string_view text) noexcept {
    std::string t(text);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return std::tolower(c); });
    if (t == "detected")
        return Expected::Detected;
    if (t == "bypassed")
        return Expected::Bypassed;
    if (t == "unaffected")
        return Expected::Unaffected;
    return std::nullopt;
}

Expected classify(const vm::RunResult &attacked, const vm::RunResult &benign) {
    if (attacked.ccfi_violation())
        return Expected::Detected;
    if (attacked.outcome == benign.outcome && attacked.exit_code == benign.exit_code &&
        attacked.output == benign.output && attacked.hijacks.empty())
        return Expected::Unaffected;
    return Expected::Bypassed;
}

namespace {

std::string trim(std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string &s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;)
        out.push_back(w);
    return out;
}

} // namespace

Scenario load_scenario(const fs::path &manifest) {
    Scenario sc;
    sc.name = manifest.stem().string();
    std::istringstream in(read_file(manifest));
    int line_no = 0;
    bool have_program = false;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(manifest.string() + ":" + std::to_string(line_no) +
                                        ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const fs::path base = manifest.parent_path();
        if (key == "name")
            sc.name = value;
        else if (key == "description")
            sc.description = value;
        else if (key == "program") {
            sc.program = read_file(base / value);
            have_program = true;
        } else if (key == "attack")
            sc.attack = read_file(base / value);
        else if (key == "expect") {
            auto e = parse_expected(value);
            if (!e)
                throw std::invalid_argument(manifest.string() + ": unknown expectation '" +
                                            value + "'");
            sc.expected = *e;
        } else if (key == "trials") {
            sc.trials = static_cast<unsigned>(to_u64("trials", value));
            if (sc.trials == 0)
                throw std::invalid_argument(manifest.string() + ": trials must be positive");
        } else if (key == "flags")
            apply_flags(sc.settings, split_ws(value));
        else
            throw std::invalid_argument(manifest.string() + ": unknown key '" + key + "'");
    }
    if (!have_program)
        throw std::invalid_argument(manifest.string() + ": missing program");
    return sc;
}

std::vector<Scenario> load_scenario_dir(const fs::path &dir) {
    std::vector<fs::path> files;
    for (const auto &e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".scn")
            files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<Scenario> out;
    for (const auto &f : files)
        out.push_back(load_scenario(f));
    return out;
}

ScenarioOutcome run_scenario(const Scenario &sc) {
    ScenarioOutcome out;
    out.name = sc.name;
    out.expected = sc.expected;

    const ir::Module source = load_module(sc.program);
    const ir::Module built = build(source, sc.settings);
    const vm::AttackScript script = vm::parse_attack_script(sc.attack);

    auto scan = [&](const vm::Machine &m) {
        const MacKey &key = m.reserved_key();
        out.key_occurrences += m.memory().count_occurrences(key.bytes);
        ++out.snapshots;
    };
    vm::RunHooks hooks;
    hooks.on_attack_point = [&](const vm::Machine &m, std::string_view) { scan(m); };

    bool first = true;
    bool all_match = true;
    for (unsigned t = 0; t < sc.trials; ++t) {
        vm::RunConfig cfg = run_config(sc.settings);
        cfg.seed += t;
        vm::RunResult benign = vm::run(built, {}, cfg);
        vm::Machine machine(built, cfg);
        vm::RunResult attacked = machine.run(script, hooks);
        scan(machine);
        const Expected observed = classify(attacked, benign);
        if (observed != sc.expected)
            all_match = false;
        if (first) {
            out.observed = observed;
            out.attacked = std::move(attacked);
            out.benign = std::move(benign);
            first = false;
        } else if (observed != out.observed) {
            out.detail = "outcome varies across trials";
        }
    }
    out.pass = all_match && out.key_occurrences == 0;
    if (out.detail.empty()) {
        if (out.attacked.trap)
            out.detail = out.attacked.trap->describe();
        else if (!out.attacked.hijacks.empty())
            out.detail = "hijack: " + out.attacked.hijacks.front();
        else
            out.detail = "halted with exit " + std::to_string(out.attacked.exit_code);
    }
    if (out.key_occurrences != 0)
        out.detail += "; key bytes visible in memory";
    return out;
}

// ---------------------------------------------------------------------------
// Monte-Carlo replay

ReplayResult replay_mc(const ir::Module &source, const vm::AttackScript &script,
                       const ReplayConfig &config) {
    ReplayResult result;
    result.trials = config.trials;

    Settings reference = config.settings;
    reference.pass.entropy_bits = 0;
    const ir::Module ref_module = build(source, reference);
    vm::RunConfig ref_cfg = run_config(reference);
    ref_cfg.seed = config.first_seed;
    const vm::RunResult ref = vm::run(ref_module, script, ref_cfg);
    if (!ref.halted())
        throw std::runtime_error("replay reference run did not halt: " +
                                 (ref.trap ? ref.trap->describe() : std::string("?")));
    result.reference_output = ref.output;

    Settings randomized = config.settings;
    randomized.pass.entropy_bits = config.entropy_bits;
    const ir::Module module = build(source, randomized);
    const vm::RunConfig base_cfg = run_config(randomized);

    std::atomic<unsigned> next{0};
    std::atomic<unsigned> successes{0};
    auto worker = [&] {
        for (unsigned i = next++; i < config.trials; i = next++) {
            vm::RunConfig cfg = base_cfg;
            cfg.seed = config.first_seed + i;
            const vm::RunResult r = vm::run(module, script, cfg);
            if (r.halted() && r.output == ref.output && r.exit_code == ref.exit_code)
                ++successes;
        }
    };
    unsigned threads = config.threads ? config.threads : std::thread::hardware_concurrency();
    threads = std::clamp(threads, 1u, 64u);
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t)
        pool.emplace_back(worker);
    worker();
    for (auto &th : pool)
        th.join();

    result.successes = successes;
    result.frequency = config.trials == 0 ? 0.0
                                          : static_cast<double>(result.successes) /
                                                static_cast<double>(config.trials);
    return result;
}

// ---------------------------------------------------------------------------
// Benchmarks

namespace {

bool is_empty_function(const ir::Function &fn) {
    return fn.body.size() == 1 && fn.body[0].op == ir::Op::Ret;
}

} // namespace

BenchRow bench_program(const std::string &name, const ir::Module &source,
                       const Settings &settings) {
    Settings base = settings;
    base.instrument = false;
    Settings inst = settings;
    inst.instrument = true;

    const vm::RunResult b = vm::run(build(source, base), {}, run_config(base));
    const vm::RunResult r = vm::run(build(source, inst), {}, run_config(inst));

    BenchRow row;
    row.program = name;
    row.baseline_steps = b.counters.steps;
    row.instrumented_steps = r.counters.steps;
    row.mac_ops = r.counters.mac_ops;
    row.checkptr_ops = r.counters.checkptr_ops;
    row.indirect_calls = r.counters.indirect_calls;
    row.calls = r.counters.calls;
    row.outputs_match = b.output == r.output && b.outcome == r.outcome &&
                        b.exit_code == r.exit_code;
    for (const auto &fn : source.functions) {
        auto bi = b.per_function.find(fn.name);
        auto ri = r.per_function.find(fn.name);
        if (bi == b.per_function.end() || ri == r.per_function.end() ||
            bi->second.invocations == 0 || bi->second.invocations != ri->second.invocations)
            continue;
        CallDelta d;
        d.function = fn.name;
        d.invocations = bi->second.invocations;
        d.delta_per_call = (static_cast<std::int64_t>(ri->second.steps) -
                            static_cast<std::int64_t>(bi->second.steps)) /
                           static_cast<std::int64_t>(d.invocations);
        d.empty = is_empty_function(fn);
        row.deltas.push_back(d);
    }
    return row;
}

BenchReport bench(const std::vector<std::pair<std::string, ir::Module>> &programs,
                  const Settings &settings) {
    BenchReport report;
    std::optional<std::int64_t> constant;
    bool uniform = true;
    for (const auto &[name, module] : programs) {
        report.rows.push_back(bench_program(name, module, settings));
        for (const auto &d : report.rows.back().deltas) {
            if (!d.empty || d.function == "main")
                continue;
            ++report.empty_callees;
            if (!constant)
                constant = d.delta_per_call;
            else if (*constant != d.delta_per_call)
                uniform = false;
        }
    }
    if (uniform)
        report.empty_call_delta = constant;
    return report;
}

} // namespace ccfi::harness
