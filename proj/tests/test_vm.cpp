#include <gtest/gtest.h>

#include "ccfi/harness.hpp"
#include "ccfi/vm.hpp"
#include "support.hpp"

using namespace ccfi;

namespace {

vm::RunResult run_file(const std::string &rel, const std::vector<std::string> &flags = {},
                       const std::string &attack = "") {
    harness::Settings s;
    harness::apply_flags(s, flags);
    return vm::run(harness::build(harness::load_module_file(test::fixture(rel)), s),
                   vm::parse_attack_script(attack), harness::run_config(s));
}

vm::RunResult run_text(const std::string &ir, const std::vector<std::string> &flags = {},
                       const std::string &attack = "") {
    harness::Settings s;
    harness::apply_flags(s, flags);
    return vm::run(harness::build(harness::load_module(ir), s), vm::parse_attack_script(attack),
                   harness::run_config(s));
}

const harness::Scenario &scenario(const std::string &name) {
    for (const auto &s : harness::builtin_scenarios())
        if (s.name == name)
            return s;
    throw std::out_of_range(name);
}

} // namespace

TEST(Vm, HelloPrints42) {
    const auto r = run_file("hello.ir");
    EXPECT_TRUE(r.halted());
    EXPECT_EQ(r.output, std::vector<std::int64_t>{42});
    EXPECT_EQ(r.exit_code, 0);
}

TEST(Vm, StepAccountingChargesMacOps) {
    // main calls f, f returns: main gets a frame MAC (never checked, main
    // halts), f gets a MAC and a check.
    const char *text = "fn f() {\n  print 1\n  ret\n}\nfn main() {\n  call @f()\n  call @f()\n  halt 0\n}\n";
    const auto base = run_text(text, {"--baseline"});
    EXPECT_EQ(base.counters.steps, 7u);
    EXPECT_EQ(base.counters.mac_ops, 0u);
    const auto inst = run_text(text, {"--no-leaf-opt"});
    EXPECT_EQ(inst.counters.mac_ops, 5u);
    EXPECT_EQ(inst.counters.steps, 7u + 5u * (1u + vm::kMacStepCost));
    const auto leaf = run_text(text);
    EXPECT_EQ(leaf.counters.mac_ops, 1u);
    EXPECT_EQ(leaf.counters.steps, 7u + (1u + vm::kMacStepCost) + 4u);
}

TEST(Vm, DeterministicForFixedSeed) {
    const auto a = run_file("corpus/16_bubble_sort.ir", {"--seed", "9", "--entropy", "4"});
    const auto b = run_file("corpus/16_bubble_sort.ir", {"--seed", "9", "--entropy", "4"});
    EXPECT_EQ(a, b);
}

TEST(Vm, OutputIndependentOfSeed) {
    const auto a = run_file("corpus/18_closures.ir", {"--seed", "1", "--entropy", "4"});
    const auto b = run_file("corpus/18_closures.ir", {"--seed", "2", "--entropy", "4"});
    EXPECT_EQ(a.output, b.output);
}

TEST(Vm, CallChainReturnsThroughEveryFrame) {
    const auto r = run_file("call_chain.ir");
    EXPECT_EQ(r.output, std::vector<std::int64_t>{13});
    EXPECT_EQ(r.counters.calls, 3u);
}

TEST(Vm, FunctionPointerArray) {
    const auto r = run_file("fptr_array.ir");
    EXPECT_EQ(r.output, std::vector<std::int64_t>{42});
    EXPECT_EQ(r.counters.indirect_calls, 1u);
    EXPECT_EQ(r.counters.checkptr_ops, 1u);
}

TEST(Vm, StoredMacMatchesReference) {
    harness::Settings s;
    const auto built = harness::build(harness::load_module_file(test::fixture("fptr_array.ir")), s);
    vm::Machine m(built, harness::run_config(s));
    const auto r = m.run();
    ASSERT_TRUE(r.halted());
    const std::uint64_t slot = m.global_address("table") + 8;
    const auto stored = m.attacker_read(m.mac_table().slot_address(slot), 16);
    const std::uint64_t cls = (1ull << 63) | slot;
    const auto expected = test::reference_mac(m.reserved_key().bytes,
                                              m.function_address("twice"), cls);
    EXPECT_TRUE(std::equal(stored.begin(), stored.end(), expected.begin()));
}

TEST(Vm, KeyNeverReachesGuestMemory) {
    harness::Settings s;
    const auto built =
        harness::build(harness::load_module_file(test::fixture("corpus/07_vtables.ir")), s);
    vm::Machine m(built, harness::run_config(s));
    ASSERT_TRUE(m.run().halted());
    EXPECT_EQ(m.memory().count_occurrences(m.reserved_key().bytes), 0u);
}

TEST(Vm, AttackerCannotWriteCode) {
    const auto r = run_text("fn main() {\n  attack_point p\n  print 1\n  halt 0\n}\n", {},
                            "on p: write @main 0x0\n");
    ASSERT_EQ(r.attack_log.size(), 1u);
    EXPECT_EQ(r.attack_log[0].status, vm::AttackLogEntry::Status::Rejected);
    EXPECT_EQ(r.output, std::vector<std::int64_t>{1});
}

TEST(Vm, AttackerCannotWriteConstData) {
    const auto r = run_text(
        "const k: i64 = 5\nfn main() {\n  attack_point p\n  %v = load i64, &k\n  print %v\n  halt 0\n}\n",
        {}, "on p: write &k 0x9\n");
    EXPECT_EQ(r.attack_log.at(0).status, vm::AttackLogEntry::Status::Rejected);
    EXPECT_EQ(r.output, std::vector<std::int64_t>{5});
}

TEST(Vm, AttackerFaultOnUnmappedRead) {
    const auto r = run_text("fn main() {\n  attack_point p\n  halt 0\n}\n", {},
                            "on p: read 0x10 8 as v\n");
    EXPECT_EQ(r.attack_log.at(0).status, vm::AttackLogEntry::Status::Faulted);
}

TEST(Vm, OccurrenceSelectsNthHit) {
    const auto r = run_text(R"(
global g: i64 = 0
fn main() {
  %i = mov 0
Loop:
  %more = lt %i, 3
  br %more, Body, Done
Body:
  attack_point p
  %v = load i64, &g
  print %v
  %i = add %i, 1
  jmp Loop
Done:
  halt 0
}
)",
                            {}, "on p#2: write &g 0x7\n");
    EXPECT_EQ(r.output, (std::vector<std::int64_t>{0, 7, 7}));
}

TEST(Vm, LeafFunctionsDoNoMacOps) {
    const auto r = run_file("bench/leaf_work.ir");
    EXPECT_EQ(r.per_function.at("leaf").mac_ops, 0u);
    EXPECT_EQ(r.per_function.at("leaf").invocations, 10u);
    const auto off = run_file("bench/leaf_work.ir", {"--no-leaf-opt"});
    EXPECT_EQ(off.per_function.at("leaf").mac_ops, 20u);
}

TEST(Vm, FramePointerOnlyCorruptionTraps) {
    const auto &sc = scenario("S4");
    auto r = vm::run(harness::build(harness::load_module(sc.program), sc.settings),
                     vm::parse_attack_script(sc.attack), harness::run_config(sc.settings));
    ASSERT_TRUE(r.trap);
    EXPECT_EQ(r.trap->kind, vm::TrapKind::CcfiViolation);
    EXPECT_EQ(r.trap->pointer_kind, PointerKind::ReturnAddress);
    EXPECT_EQ(r.trap->function, "victim");
}

TEST(Vm, FramePointerCorruptionHijacksUnprotected) {
    const auto &sc = scenario("S4");
    harness::Settings s = sc.settings;
    s.instrument = false;
    auto r = vm::run(harness::build(harness::load_module(sc.program), s),
                     vm::parse_attack_script(sc.attack), harness::run_config(s));
    EXPECT_TRUE(r.halted());
    EXPECT_EQ(r.exit_code, 66);
    EXPECT_EQ(r.counters.hijacks, 1u);
}

TEST(Vm, CrashModeZeroClearsFrameInsteadOfTrapping) {
    const auto &sc = scenario("S4");
    harness::Settings s = sc.settings;
    harness::apply_flags(s, {"--crash-mode", "zero"});
    auto r = vm::run(harness::build(harness::load_module(sc.program), s),
                     vm::parse_attack_script(sc.attack), harness::run_config(s));
    ASSERT_TRUE(r.trap);
    EXPECT_EQ(r.trap->kind, vm::TrapKind::MemoryFault);
    EXPECT_TRUE(r.output.empty());
}

TEST(Vm, StepLimitTraps) {
    const auto r = run_text("fn main() {\nL:\n  jmp L\n}\n", {"--step-limit", "1000"});
    ASSERT_TRUE(r.trap);
    EXPECT_EQ(r.trap->kind, vm::TrapKind::StepLimit);
}

TEST(Vm, IndirectCallToNonEntryFaults) {
    const auto r = run_text(R"(
fn f() {
  ret
}
fn main() {
  %w = cast i64 @f
  %w = add %w, 8
  %g = cast fn() %w
  icall %g()
  halt 0
}
)",
                            {"--baseline"});
    ASSERT_TRUE(r.trap);
    EXPECT_EQ(r.trap->kind, vm::TrapKind::MemoryFault);
}

TEST(Vm, DirectMappedTableCountsCollisions) {
    const auto exact = run_file("corpus/05_jump_table.ir");
    EXPECT_EQ(exact.counters.table_collisions, 0u);
    const auto tiny = run_file("corpus/05_jump_table.ir", {"--mac-table", "direct:1"});
    EXPECT_GT(tiny.counters.table_collisions, 0u);
    EXPECT_TRUE(tiny.ccfi_violation());
}

TEST(Vm, LargeDirectTableBehavesLikeExact) {
    const auto exact = run_file("corpus/12_nested_records.ir");
    const auto big = run_file("corpus/12_nested_records.ir", {"--mac-table", "direct:4096"});
    EXPECT_EQ(exact.output, big.output);
    EXPECT_TRUE(big.halted());
}

TEST(Vm, RawCopyOfProtectedRecordTraps) {
    const auto r = run_file("hazards/struct_rawcopy.ir");
    EXPECT_TRUE(r.ccfi_violation());
    EXPECT_EQ(run_file("hazards/struct_rawcopy.ir", {"--baseline"}).output,
              std::vector<std::int64_t>{42});
}

TEST(Vm, CcfiRawCopyCarriesMacs) {
    const auto r = run_file("corpus/09_ccfi_rawcopy.ir");
    EXPECT_TRUE(r.halted());
    EXPECT_EQ(r.output, (std::vector<std::int64_t>{20, 10}));
}

TEST(Vm, ManualGuardCatchesTamperedData) {
    const auto r = run_text(R"(
global mode: i64 = 0
fn main() {
  store i64 2, &mode
  macptr 2, data, &mode
  attack_point p
  %raw = load i64, &mode
  %m = checkptr %raw, data, &mode
  ccfi_guard %m, %raw, data
  print %m
  halt 0
}
)",
                            {}, "on p: write &mode 0x3\n");
    ASSERT_TRUE(r.trap);
    EXPECT_EQ(r.trap->pointer_kind, PointerKind::ManualData);
}

TEST(Vm, ManualGuardPassesZeroValue) {
    // A zero data word passes checkptr without a MAC, a known limit of the
    // all-zero-is-null convention.
    const auto r = run_text(R"(
global mode: i64 = 0
fn main() {
  store i64 2, &mode
  macptr 2, data, &mode
  attack_point p
  %raw = load i64, &mode
  %m = checkptr %raw, data, &mode
  ccfi_guard %m, %raw, data
  print %m
  halt 0
}
)",
                            {}, "on p: write &mode 0x0\n");
    EXPECT_TRUE(r.halted());
    EXPECT_EQ(r.output, std::vector<std::int64_t>{0});
}
