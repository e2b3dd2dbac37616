#include <algorithm>

#include <gtest/gtest.h>

#include "ccfi/harness.hpp"
#include "ccfi/pass.hpp"
#include "support.hpp"

using namespace ccfi;

namespace {

const char *kProgram = R"(
global op: fn(i64)->i64 = @inc

fn inc(%x: i64) -> i64 {
  %y = add %x, 1
  ret %y
}

fn apply(%x: i64) -> i64 {
  %f = load fn(i64)->i64, &op
  %r = icall %f(%x)
  ret %r
}

fn main() {
  store fn(i64)->i64 @inc, &op
  %r = call @apply(1)
  print %r
  halt 0
}
)";

std::size_t count(const ir::Function &fn, ir::Op op) {
    return static_cast<std::size_t>(std::count_if(fn.body.begin(), fn.body.end(),
                                                  [&](const ir::Instr &i) { return i.op == op; }));
}

ir::Module instrument(const char *text, pass::PassConfig cfg = pass::PassConfig::full()) {
    return pass::instrument_module(harness::load_module(text), cfg);
}

} // namespace

TEST(Pass, AllOffIsIdentity) {
    const auto m = harness::load_module(kProgram);
    EXPECT_EQ(pass::instrument_module(m, pass::PassConfig::off()), m);
}

TEST(Pass, RecordsAttributes) {
    auto cfg = pass::PassConfig::full();
    cfg.entropy_bits = 3;
    const auto m = instrument(kProgram, cfg);
    EXPECT_TRUE(m.attrs.instrumented);
    EXPECT_TRUE(m.attrs.stack);
    EXPECT_TRUE(m.attrs.fptr);
    EXPECT_EQ(m.attrs.entropy, 3u);
}

TEST(Pass, NonLeafGetsFrameMacAndCheckBeforeEveryRet) {
    const auto m = instrument(kProgram);
    const auto &apply = *m.find_function("apply");
    EXPECT_EQ(count(apply, ir::Op::FrameMac), 1u);
    EXPECT_EQ(count(apply, ir::Op::FrameCheck), count(apply, ir::Op::Ret));
    EXPECT_EQ(apply.body.front().op, ir::Op::FrameMac);
}

TEST(Pass, LeafUsesReservedRegisterInsteadOfMac) {
    const auto m = instrument(kProgram);
    const auto &inc = *m.find_function("inc");
    EXPECT_EQ(count(inc, ir::Op::FrameMac), 0u);
    EXPECT_EQ(count(inc, ir::Op::LeafSave), 1u);
    EXPECT_EQ(count(inc, ir::Op::LeafCheck), 1u);
}

TEST(Pass, LeafOptOffTreatsLeavesLikeOthers) {
    auto cfg = pass::PassConfig::full();
    cfg.leaf_opt = false;
    const auto m = instrument(kProgram, cfg);
    const auto &inc = *m.find_function("inc");
    EXPECT_EQ(count(inc, ir::Op::FrameMac), 1u);
    EXPECT_EQ(count(inc, ir::Op::LeafSave), 0u);
}

TEST(Pass, LeafOptimizeRejectsNonLeaf) {
    const auto m = harness::load_module(kProgram);
    EXPECT_THROW(pass::leaf_optimize(*m.find_function("apply"), pass::PassConfig::full()),
                 std::invalid_argument);
}

TEST(Pass, PadPrecedesFrameMacWhenEntropyOn) {
    auto cfg = pass::PassConfig::full();
    cfg.entropy_bits = 4;
    const auto m = instrument(kProgram, cfg);
    const auto &apply = *m.find_function("apply");
    ASSERT_GE(apply.body.size(), 2u);
    EXPECT_EQ(apply.body[0].op, ir::Op::FramePad);
    EXPECT_EQ(apply.body[0].index, 4);
    EXPECT_EQ(apply.body[1].op, ir::Op::FrameMac);
}

TEST(Pass, EntropyAboveSixteenBitsRejected) {
    auto cfg = pass::PassConfig::full();
    cfg.entropy_bits = 17;
    EXPECT_THROW(instrument(kProgram, cfg), std::invalid_argument);
}

TEST(Pass, StoresAreMacedAndLoadsChecked) {
    const auto m = instrument(kProgram);
    EXPECT_EQ(count(*m.find_function("main"), ir::Op::MacPtr), 1u);
    const auto &apply = *m.find_function("apply");
    EXPECT_EQ(count(apply, ir::Op::CheckPtr), 1u);
    EXPECT_EQ(count(apply, ir::Op::Guard), 1u);
}

TEST(Pass, GlobalInitializerMacsFunctionPointers) {
    const auto m = instrument(kProgram);
    const auto *init = m.find_function(ir::kInitFunction);
    ASSERT_NE(init, nullptr);
    EXPECT_EQ(count(*init, ir::Op::MacPtr), 1u);
}

TEST(Pass, NoInitFunctionWithoutProtectedGlobals) {
    const auto m = instrument("fn main() {\n  print 1\n  halt 0\n}\n");
    EXPECT_EQ(m.find_function(ir::kInitFunction), nullptr);
}

TEST(Pass, SignatureClassesCarryHash) {
    auto cfg = pass::PassConfig::full();
    cfg.type_sig_classes = true;
    const auto m = instrument(kProgram, cfg);
    const auto &apply = *m.find_function("apply");
    for (const auto &in : apply.body)
        if (in.op == ir::Op::CheckPtr) {
            ASSERT_TRUE(in.sig);
            EXPECT_EQ(*in.sig, signature_hash("fn(i64)->i64"));
        }
}

TEST(Pass, PointerProtectionOffLeavesLoadsAlone) {
    auto cfg = pass::PassConfig::full();
    cfg.protect_pointers = false;
    const auto m = instrument(kProgram, cfg);
    EXPECT_EQ(count(*m.find_function("apply"), ir::Op::CheckPtr), 0u);
    EXPECT_EQ(m.find_function(ir::kInitFunction), nullptr);
}

TEST(Pass, TypedCopyIsExpanded) {
    const auto m = instrument(R"(
record H { fn()->i64, i64 }
global proto: H = { @z, 1 }
fn z() -> i64 {
  ret 0
}
fn main() {
  %h = alloca H
  copy H %h, &proto
  halt 0
}
)");
    const auto &main = *m.find_function("main");
    EXPECT_EQ(count(main, ir::Op::CheckPtr), 1u);
    EXPECT_EQ(count(main, ir::Op::MacPtr), 1u);
    EXPECT_EQ(count(main, ir::Op::Copy), 1u);
}

TEST(Pass, InstrumentedFixturesAreFullyMediated) {
    for (const char *dir : {"corpus", "bench", "replay"})
        for (const auto &f : test::fixture_files(dir)) {
            SCOPED_TRACE(f.string());
            const auto m =
                pass::instrument_module(harness::load_module_file(f), pass::PassConfig::full());
            EXPECT_TRUE(pass::verify_mediation(m).empty());
        }
}

TEST(Pass, MediationCheckFlagsUncheckedIcall) {
    const auto m = harness::load_module(kProgram);
    EXPECT_FALSE(pass::verify_mediation(m).empty());
}

TEST(Pass, InputModuleUnchanged) {
    const auto m = harness::load_module(kProgram);
    const auto copy = m;
    (void)pass::instrument_module(m, pass::PassConfig::full());
    EXPECT_EQ(m, copy);
}
