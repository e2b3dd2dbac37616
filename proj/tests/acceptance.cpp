// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "ccfi/aes128.hpp"
#include "ccfi/analyzer.hpp"
#include "ccfi/harness.hpp"
#include "ccfi/rand_alloc.hpp"
#include "ccfi/vm.hpp"
#include "support.hpp"

using namespace ccfi;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// 1. AES-128 against FIPS-197 and OpenSSL.
Verdict aes_oracle() {
    const auto start = std::chrono::steady_clock::now();
    struct Vector {
        const char *key, *in, *out;
    };
    const Vector vectors[] = {
        {"2b7e151628aed2a6abf7158809cf4f3c", "3243f6a8885a308d313198a2e0370734",
         "3925841d02dc09fbdc118597196a0b32"},
        {"000102030405060708090a0b0c0d0e0f", "00112233445566778899aabbccddeeff",
         "69c4e0d86a7b0430d8cdb78070b4c55a"},
    };
    for (const auto &v : vectors)
        if (crypto::Aes128(test::from_hex(v.key)).encrypt(test::from_hex(v.in)) !=
            test::from_hex(v.out))
            return {false, std::string("FIPS-197 vector mismatch for key ") + v.key};

    std::mt19937_64 rng(0xae5);
    int mismatches = 0;
    for (int i = 0; i < 1000; ++i) {
        std::array<std::uint8_t, 16> key{};
        crypto::Block in{};
        for (auto &b : key)
            b = static_cast<std::uint8_t>(rng());
        for (auto &b : in)
            b = static_cast<std::uint8_t>(rng());
        if (crypto::Aes128(key).encrypt(in) != test::openssl_aes128(key, in))
            ++mismatches;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {mismatches == 0 && secs < 1.0,
            fmt("2 FIPS vectors, %d/1000 random mismatches, %.3f s", mismatches, secs)};
}

std::string render(const vm::RunResult &r) {
    std::ostringstream out;
    for (auto v : r.output)
        out << v << "\n";
    out << (r.halted() ? "halted " : "trapped ") << r.exit_code << "\n";
    return out.str();
}

// 2. Benign corpus: identical output with and without instrumentation.
Verdict transparency() {
    const auto files = test::fixture_files("corpus");
    int mismatches = 0, violations = 0, runs = 0;
    for (const auto &f : files) {
        const auto m = harness::load_module_file(f);
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            harness::Settings base, inst;
            harness::apply_flags(base, {"--baseline", "--seed", std::to_string(seed)});
            harness::apply_flags(inst, {"--seed", std::to_string(seed), "--entropy", "4",
                                        "--mac-table", "exact"});
            const auto b = vm::run(harness::build(m, base), {}, harness::run_config(base));
            const auto i = vm::run(harness::build(m, inst), {}, harness::run_config(inst));
            ++runs;
            violations += i.ccfi_violation() ? 1 : 0;
            mismatches += render(b) != render(i) || !b.halted() ? 1 : 0;
        }
    }
    return {files.size() >= 20 && mismatches == 0 && violations == 0,
            fmt("%zu programs, %d runs, %d output mismatches, %d violations", files.size(), runs,
                mismatches, violations)};
}

// 3. Scenario suite, three repetitions.
Verdict attack_suite() {
    const std::map<std::string, harness::Expected> contract = {
        {"S1", harness::Expected::Detected}, {"S2", harness::Expected::Bypassed},
        {"S3", harness::Expected::Detected}, {"S4", harness::Expected::Detected},
        {"S5", harness::Expected::Detected}, {"S6", harness::Expected::Bypassed},
        {"S7", harness::Expected::Detected}, {"S8", harness::Expected::Detected}};
    std::map<std::string, std::vector<harness::ScenarioOutcome>> seen;
    for (int rep = 0; rep < 3; ++rep)
        for (const auto &sc : harness::builtin_scenarios())
            seen[sc.name].push_back(harness::run_scenario(sc));
    std::string wrong;
    for (const auto &[name, want] : contract) {
        const auto &runs = seen[name];
        bool ok = runs.size() == 3;
        for (const auto &o : runs)
            ok = ok && o.observed == want && o.attacked == runs[0].attacked &&
                 o.benign == runs[0].benign;
        if (!ok)
            wrong += " " + name;
    }
    return {wrong.empty() && seen.size() == contract.size(),
            wrong.empty() ? "S1-S8 match their contracts in 3/3 runs" : "wrong or unstable:" + wrong};
}

// 4. Same-address replay frequency under 4 bits of pad per frame.
Verdict replay_probability() {
    auto trial = [](const char *stem) {
        harness::ReplayConfig cfg;
        cfg.trials = 10'000;
        cfg.entropy_bits = 4;
        const std::string base = std::string("replay/") + stem;
        return harness::replay_mc(
            harness::load_module_file(test::fixture(base + ".ir")),
            vm::parse_attack_script(harness::read_file(test::fixture(base + ".atk"))), cfg);
    };
    // Each padded frame repeats its pad with probability 2^-4, independently.
    const double p1 = 1.0 / 16, p2 = p1 * p1;
    const auto d1 = trial("depth1");
    const auto d2 = trial("depth2");
    const bool ok = std::abs(d1.frequency - p1) <= 0.01 && std::abs(d2.frequency - p2) <= 0.005;
    return {ok, fmt("depth 1: %.4f (want %.4f +/- 0.01), depth 2: %.4f (want %.4f +/- 0.005)",
                    d1.frequency, p1, d2.frequency, p2)};
}

// Occurrences of `key` in materialized guest memory, including matches
// that straddle two adjacent pages.
std::size_t scan_for_key(const vm::Memory &mem, const MacKey &key) {
    std::size_t hits = 0;
    std::vector<std::uint8_t> tail;
    std::uint64_t next = 0;
    mem.for_each_page([&](std::uint64_t base, std::span<const std::uint8_t> page) {
        std::vector<std::uint8_t> buf;
        if (base == next)
            buf = tail;
        buf.insert(buf.end(), page.begin(), page.end());
        for (auto it = buf.begin();
             (it = std::search(it, buf.end(), key.bytes.begin(), key.bytes.end())) != buf.end();
             ++it)
            ++hits;
        tail.assign(page.end() - 15, page.end());
        next = base + page.size();
    });
    return hits;
}

// 5. The key never appears in anything the attacker can read.
Verdict key_secrecy() {
    std::size_t snapshots = 0, hits = 0, harness_hits = 0;
    for (const auto &sc : harness::builtin_scenarios()) {
        harness_hits += harness::run_scenario(sc).key_occurrences;
        const auto built = harness::build(harness::load_module(sc.program), sc.settings);
        const auto script = vm::parse_attack_script(sc.attack);
        for (unsigned t = 0; t < sc.trials; ++t) {
            auto cfg = harness::run_config(sc.settings);
            cfg.seed += t;
            vm::Machine m(built, cfg);
            vm::RunHooks hooks;
            hooks.on_attack_point = [&](const vm::Machine &mm, std::string_view) {
                ++snapshots;
                hits += scan_for_key(mm.memory(), mm.reserved_key());
            };
            m.run(script, hooks);
            ++snapshots;
            hits += scan_for_key(m.memory(), m.reserved_key());
        }
    }
    return {hits == 0 && harness_hits == 0 && snapshots > 0,
            fmt("%zu snapshots, %zu occurrences (harness scan: %zu)", snapshots, hits,
                harness_hits)};
}

// 6. Per-call overhead of empty callees is one constant; leaf frames are
// cheaper and MAC-free.
Verdict call_overhead() {
    std::vector<std::pair<std::string, ir::Module>> programs;
    for (const auto &f : test::fixture_files("bench"))
        if (f.filename().string().rfind("empty_", 0) == 0)
            programs.emplace_back(f.filename().string(), harness::load_module_file(f));

    harness::Settings off, on;
    harness::apply_flags(off, {"--no-leaf-opt"});
    const auto rep_off = harness::bench(programs, off);
    const auto rep_on = harness::bench(programs, on);

    // Without the leaf path, a call adds a frame MAC and a frame check: two
    // instructions and two MAC operations. The leaf path adds two
    // instructions and no MAC operation.
    const std::int64_t want_off = 2 + 2 * static_cast<std::int64_t>(vm::kMacStepCost);
    const std::int64_t want_on = 2;

    std::uint64_t leaf_macs = 0;
    for (const auto &[name, m] : programs) {
        const auto r = vm::run(harness::build(m, on), {}, harness::run_config(on));
        for (const auto &fn : m.functions)
            if (fn.name != "main" && fn.is_leaf() && r.per_function.count(fn.name))
                leaf_macs += r.per_function.at(fn.name).mac_ops;
    }
    const bool ok = rep_off.empty_callees >= 5 && rep_off.empty_call_delta &&
                    rep_on.empty_call_delta && *rep_off.empty_call_delta == want_off &&
                    *rep_on.empty_call_delta == want_on &&
                    *rep_on.empty_call_delta < *rep_off.empty_call_delta && leaf_macs == 0;
    return {ok, fmt("%zu empty callees: %lld steps/call (want %lld), leaf path %lld (want %lld), "
                    "leaf MAC ops %llu",
                    rep_off.empty_callees,
                    static_cast<long long>(rep_off.empty_call_delta.value_or(-1)),
                    static_cast<long long>(want_off),
                    static_cast<long long>(rep_on.empty_call_delta.value_or(-1)),
                    static_cast<long long>(want_on), static_cast<unsigned long long>(leaf_macs))};
}

// 7. Analyzer finds exactly the planted hazards and covers every run-time
// MAC failure.
Verdict analyzer_fidelity() {
    int planted_wrong = 0, clean_hits = 0, uncovered = 0, failures = 0;
    for (const auto &f : test::fixture_files("hazards")) {
        const auto m = harness::load_module_file(f);
        const auto hazards = analysis::analyze_module(m);
        std::map<std::string, int> got;
        for (const auto &h : hazards)
            ++got[std::string(analysis::to_string(h.kind))];
        const auto want = test::expected_hazards(f);
        if (want.empty() || got != std::map<std::string, int>(want.begin(), want.end()))
            ++planted_wrong;
    }
    std::vector<std::filesystem::path> all = test::fixture_files("corpus");
    for (const auto &f : test::fixture_files("corpus")) {
        if (!analysis::analyze_module(harness::load_module_file(f)).empty())
            ++clean_hits;
    }
    const auto hz = test::fixture_files("hazards");
    all.insert(all.end(), hz.begin(), hz.end());
    for (const auto &f : all) {
        const auto m = harness::load_module_file(f);
        const bool flagged = analysis::has_warnings(analysis::analyze_module(m));
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            harness::Settings s;
            harness::apply_flags(s, {"--seed", std::to_string(seed)});
            const auto r = vm::run(harness::build(m, s), {}, harness::run_config(s));
            if (r.ccfi_violation()) {
                ++failures;
                if (!flagged)
                    ++uncovered;
            }
        }
    }
    return {planted_wrong == 0 && clean_hits == 0 && uncovered == 0 && failures > 0,
            fmt("%zu planted fixtures, %d miscounted; %d clean-corpus hazards; %d run-time MAC "
                "failures, %d unflagged",
                hz.size(), planted_wrong, clean_hits, failures, uncovered)};
}

// 8. Pad statistics at 4 bits.
Verdict allocator_statistics() {
    Prng prng(2024);
    RandAllocator heap(vm::layout::kHeapBase, vm::layout::kHeapSize, {4, false});
    std::set<std::uint64_t> pads;
    std::uint64_t end = vm::layout::kHeapBase;
    for (int i = 0; i < 1000; ++i) {
        const auto a = heap.allocate(8, prng);
        pads.insert((a - end) / RandAllocator::kGranule);
        end = a + 8;
    }
    std::array<int, 16> counts{};
    const int n = 16'000;
    for (int i = 0; i < n; ++i)
        ++counts.at(heap.frame_pad(prng) / RandAllocator::kGranule);
    double chi = 0;
    for (int c : counts)
        chi += (c - n / 16.0) * (c - n / 16.0) / (n / 16.0);
    const double p = test::chi_square_p(chi, 15);
    return {pads.size() == 16 && p > 0.001,
            fmt("%zu/16 pads in 1000 allocations; chi2 = %.2f, p = %.4f", pads.size(), chi, p)};
}

} // namespace

int main() {
    const std::vector<std::pair<const char *, std::function<Verdict()>>> criteria = {
        {"AES oracle equivalence", aes_oracle},
        {"semantic transparency", transparency},
        {"attack suite", attack_suite},
        {"replay probability", replay_probability},
        {"key secrecy", key_secrecy},
        {"constant call overhead", call_overhead},
        {"analyzer fidelity", analyzer_fidelity},
        {"allocator statistics", allocator_statistics},
    };
    bool all = true;
    int n = 0;
    for (const auto &[name, check] : criteria) {
        ++n;
        Verdict v;
        try {
            v = check();
        } catch (const std::exception &e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        all = all && v.pass;
        std::printf("%s %d %s: %s\n", v.pass ? "PASS" : "FAIL", n, name, v.detail.c_str());
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
