#include "ccfi/harness.hpp"

namespace ccfi::harness {

namespace {

// S1: two MACed globals trade places, values and MACs together. The MAC is
// bound to the storage address, so neither pair verifies at its new home.
constexpr const char *kCrossSwapIr = R"(
global g1: fn(i64)->i64 = @inc
global g2: fn(i64)->i64 = @dbl

fn inc(%x: i64) -> i64 {
  %y = add %x, 1
  ret %y
}

fn dbl(%x: i64) -> i64 {
  %y = mul %x, 2
  ret %y
}

fn main() {
  attack_point swap
  %f = load fn(i64)->i64, &g1
  %r = icall %f(10)
  print %r
  halt 0
}
)";

constexpr const char *kCrossSwapAtk = R"(
on swap: read &g1 8 as v1
on swap: read &g2 8 as v2
on swap: read macslot(&g1) 16 as m1
on swap: read macslot(&g2) 16 as m2
on swap: write &g1 v2
on swap: write &g2 v1
on swap: write macslot(&g1) m2
on swap: write macslot(&g2) m1
)";

// S2: a freed chunk comes back at the same address; the attacker replays
// the pair observed there before the free.
constexpr const char *kHeapReplayIr = R"(
fn admin(%x: i64) -> i64 {
  %y = add %x, 1000
  ret %y
}

fn user(%x: i64) -> i64 {
  %y = add %x, 1
  ret %y
}

fn main() {
  %o1 = heap_alloc 8
  store fn(i64)->i64 @admin, %o1
  attack_point observe
  heap_free %o1
  %o2 = heap_alloc 8
  store fn(i64)->i64 @user, %o2
  attack_point replay
  %f = load fn(i64)->i64, %o2
  %r = icall %f(1)
  print %r
  halt 0
}
)";

constexpr const char *kHeapReplayAtk = R"(
on observe: let a = %o1
on observe: read $a 8 as v
on observe: read macslot($a) 16 as m
on replay: write $a v
on replay: write macslot($a) m
)";

// S3: a valid function-pointer MAC for @evil stored at &g is presented as a
// return-address MAC by forging the saved frame pointer to the same
// numeric address. Only the domain bit tells the two classes apart.
constexpr const char *kDomainIr = R"(
global g: fn() = @evil

fn evil() {
  print 666
  halt 66
}

fn helper() {
  ret
}

fn victim() {
  call @helper()
  attack_point smash
  ret
}

fn main() {
  call @victim()
  print 1
  halt 0
}
)";

constexpr const char *kDomainAtk = R"(
on smash: read &g 8 as ev
on smash: read macslot(&g) 16 as m
on smash: write frame[1] ev
on smash: write frame[0] u64(&g)
on smash: write frame[-2] m
)";

// S4: only the saved frame pointer changes, to a fake frame below the live
// stack whose return slot points at @evil.
constexpr const char *kFramePtrIr = R"(
fn evil() {
  print 666
  halt 66
}

fn helper() {
  ret
}

fn victim() {
  call @helper()
  attack_point smash
  ret
}

fn main() -> i64 {
  call @victim()
  print 1
  ret 0
}
)";

constexpr const char *kFramePtrAtk = R"(
on smash: write frame[-8] 0x0
on smash: write frame[-7] u64(@evil)
on smash: write frame[0] u64(frame[-8])
)";

// S5: memcpy-style copy of a record holding a function pointer. The bytes
// move, the MAC does not.
constexpr const char *kRawCopyIr = R"(
record Handler { fn(i64)->i64, i64 }

global proto: Handler = { @inc, 5 }

fn inc(%x: i64) -> i64 {
  %y = add %x, 1
  ret %y
}

fn main() {
  %h = alloca Handler
  rawcopy %h, &proto, 16
  %p = field %h, Handler, 0
  %f = load fn(i64)->i64, %p
  %r = icall %f(1)
  print %r
  halt 0
}
)";

// S6 and S7 share the jump table; S7 adds manual protection of the index.
constexpr const char *kIndexIr = R"(
record Jt { fn(i64)->i64, fn(i64)->i64 }

const table: Jt = { @user, @admin }
global idx: i64 = 0

fn user(%x: i64) -> i64 {
  %y = add %x, 1
  ret %y
}

fn admin(%x: i64) -> i64 {
  %y = add %x, 1000
  ret %y
}

fn main() {
  attack_point bug
  %i = load i64, &idx
  %off = mul %i, 8
  %slot = offset &table, %off
  %f = load fn(i64)->i64, %slot
  %r = icall %f(7)
  print %r
  halt 0
}
)";

constexpr const char *kIndexManualIr = R"(
record Jt { fn(i64)->i64, fn(i64)->i64 }

const table: Jt = { @user, @admin }
global idx: i64 = 0

fn user(%x: i64) -> i64 {
  %y = add %x, 1
  ret %y
}

fn admin(%x: i64) -> i64 {
  %y = add %x, 1000
  ret %y
}

fn set_index(%i: i64) {
  store i64 %i, &idx
  macptr %i, data, &idx
  ret
}

fn main() {
  call @set_index(0)
  attack_point bug
  %raw = load i64, &idx
  %i = checkptr %raw, data, &idx
  ccfi_guard %i, %raw, data
  %off = mul %i, 8
  %slot = offset &table, %off
  %f = load fn(i64)->i64, %slot
  %r = icall %f(7)
  print %r
  halt 0
}
)";

constexpr const char *kIndexAtk = R"(
on bug: write &idx 0x1
)";

// S8: two frames at the same depth reuse one stack slot for function
// pointers of different types. Replaying the first pair into the second
// frame only fails when the class carries the signature hash.
constexpr const char *kTypeSigIr = R"(
fn unary(%x: i64) -> i64 {
  %y = add %x, 100
  ret %y
}

fn binary(%a: i64, %b: i64) -> i64 {
  %y = add %a, %b
  ret %y
}

fn first() {
  %s = alloca fn(i64)->i64
  store fn(i64)->i64 @unary, %s
  attack_point observe
  %f = load fn(i64)->i64, %s
  %r = icall %f(1)
  print %r
  ret
}

fn second() {
  %s = alloca fn(i64,i64)->i64
  store fn(i64,i64)->i64 @binary, %s
  attack_point replay
  %f = load fn(i64,i64)->i64, %s
  %r = icall %f(2, 3)
  print %r
  ret
}

fn main() {
  call @first()
  call @second()
  halt 0
}
)";

constexpr const char *kTypeSigAtk = R"(
on observe: let s = %s
on observe: read $s 8 as v
on observe: read macslot($s) 16 as m
on replay: write $s v
on replay: write macslot($s) m
)";

Scenario make(std::string name, std::string description, const char *ir, const char *atk,
              Expected expected, std::vector<std::string> flags = {}) {
    Scenario s;
    s.name = std::move(name);
    s.description = std::move(description);
    s.program = ir;
    s.attack = atk;
    s.expected = expected;
    apply_flags(s.settings, flags);
    return s;
}

} // namespace

const std::vector<Scenario> &builtin_scenarios() {
    static const std::vector<Scenario> all = {
        make("S1", "cross-address function pointer swap, values and MACs", kCrossSwapIr,
             kCrossSwapAtk, Expected::Detected),
        make("S2", "same-address heap replay after free and reuse", kHeapReplayIr, kHeapReplayAtk,
             Expected::Bypassed, {"--entropy", "0", "--reuse-heap"}),
        make("S3", "function-pointer MAC presented as a return-address MAC", kDomainIr, kDomainAtk,
             Expected::Detected),
        make("S4", "saved frame pointer redirected to a fake frame", kFramePtrIr, kFramePtrAtk,
             Expected::Detected),
        make("S5", "rawcopy of a protected record, then indirect call", kRawCopyIr, "",
             Expected::Detected),
        make("S6", "unprotected jump-table index overwrite", kIndexIr, kIndexAtk,
             Expected::Bypassed),
        make("S7", "jump-table index under manual data MAC", kIndexManualIr, kIndexAtk,
             Expected::Detected),
        make("S8", "same-slot replay across function pointer types with signature classes",
             kTypeSigIr, kTypeSigAtk, Expected::Detected, {"--type-sig", "--entropy", "0"}),
    };
    return all;
}

} // namespace ccfi::harness
