#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ccfi/aes128.hpp"
#include "ccfi/attack.hpp"
#include "ccfi/ir.hpp"
#include "ccfi/mac.hpp"
#include "ccfi/mac_table.hpp"
#include "ccfi/memory.hpp"
#include "ccfi/prng.hpp"
#include "ccfi/rand_alloc.hpp"

namespace ccfi::vm {

/// Extra steps charged for one MAC computation or check, on top of the
/// instruction's own step.
inline constexpr std::uint64_t kMacStepCost = 10;

enum class CrashMode : std::uint8_t {
    Trap, // failed frame check raises CcfiViolation
    Zero, // failed frame check zeroes the saved return address and frame pointer
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::uint64_t step_limit = 10'000'000;
    MacTableConfig mac_table = MacTableConfig::exact();
    unsigned heap_entropy_bits = 0;
    bool reuse_heap = false;
    CrashMode crash_mode = CrashMode::Trap;
};

enum class TrapKind : std::uint8_t { CcfiViolation, MemoryFault, TypeFault, StepLimit };
std::string_view to_string(TrapKind kind) noexcept;

struct Trap {
    TrapKind kind = TrapKind::TypeFault;
    std::string function;
    std::size_t index = 0; // instruction index in the (instrumented) body
    PointerKind pointer_kind = PointerKind::FunctionPointer; // CcfiViolation only
    std::uint64_t address = 0;                               // MemoryFault only
    std::string message;

    std::string describe() const;
    friend bool operator==(const Trap &, const Trap &) = default;
};

struct Counters {
    std::uint64_t steps = 0;
    std::uint64_t instructions = 0;
    std::uint64_t calls = 0;
    std::uint64_t indirect_calls = 0; // icall, mcall, vcall
    std::uint64_t mac_ops = 0;
    std::uint64_t macptr_ops = 0;
    std::uint64_t checkptr_ops = 0;
    std::uint64_t table_collisions = 0;
    std::uint64_t hijacks = 0;
    friend bool operator==(const Counters &, const Counters &) = default;
};

struct FunctionCounters {
    std::uint64_t invocations = 0;
    std::uint64_t steps = 0; // steps spent in the function's own body
    std::uint64_t mac_ops = 0;
    friend bool operator==(const FunctionCounters &, const FunctionCounters &) = default;
};

struct AttackLogEntry {
    enum class Status : std::uint8_t { Done, Rejected, Faulted, Error };
    std::string trigger; // label#occurrence
    std::string action;
    Status status = Status::Done;
    std::string detail;
    friend bool operator==(const AttackLogEntry &, const AttackLogEntry &) = default;
};
std::string_view to_string(AttackLogEntry::Status status) noexcept;

struct RunResult {
    enum class Outcome : std::uint8_t { Halted, Trapped };
    Outcome outcome = Outcome::Halted;
    std::int64_t exit_code = 0;
    std::optional<Trap> trap;
    std::vector<std::int64_t> output;
    Counters counters;
    std::map<std::string, FunctionCounters> per_function;
    std::vector<AttackLogEntry> attack_log;
    /// Control transfers through a return address that did not match the
    /// call stack, in order.
    std::vector<std::string> hijacks;

    bool halted() const noexcept { return outcome == Outcome::Halted; }
    bool ccfi_violation() const noexcept {
        return trap && trap->kind == TrapKind::CcfiViolation;
    }
    friend bool operator==(const RunResult &, const RunResult &) = default;
};

class Machine;

struct RunHooks {
    /// Called at every attack_point, after the attacker's actions for it.
    std::function<void(const Machine &, std::string_view label)> on_attack_point;
};

/// Executes a module: `__ccfi_init` (when present) and then `main`.
///
/// The guest sees a flat 48-bit memory with read-only code, method tables
/// and constant globals. The MAC key, the leaf slot and the PRNG are held in
/// a reserved register file that has no address. Each function's registers
/// live on the host side of its frame; only the return address, the saved
/// frame pointer, allocas, pads and frame MACs are in guest memory.
///
/// Frame layout after a call, addresses growing up:
///   [fp + 8]  return address
///   [fp]      caller's frame pointer
///   [fp - ..] pad, frame MAC slot, allocas
class Machine {
public:
    Machine(const ir::Module &module, RunConfig config);
    Machine(const Machine &) = delete;
    Machine &operator=(const Machine &) = delete;

    RunResult run(const AttackScript &script = {}, const RunHooks &hooks = {});

    /// Threat-model access paths. Reads see every mapped byte, including the
    /// MAC table and the stack. Writes are refused (AttackRejected) when any
    /// byte lies in a read-only region.
    std::vector<std::uint8_t> attacker_read(std::uint64_t addr, std::uint64_t len) const;
    void attacker_write(std::uint64_t addr, std::span<const std::uint8_t> bytes);

    std::uint64_t function_address(std::string_view name) const;
    std::uint64_t global_address(std::string_view name) const;
    std::uint64_t frame_pointer() const noexcept;
    std::uint64_t stack_pointer() const noexcept { return sp_; }
    const Memory &memory() const noexcept { return memory_; }
    const MacTable &mac_table() const noexcept { return table_; }

    /// For audits only (the key-secrecy scan): no guest or attacker path
    /// reaches this.
    const MacKey &reserved_key() const noexcept { return reserved_.key; }

private:
    struct COperand {
        enum class Kind : std::uint8_t { Reg, Value };
        Kind kind = Kind::Value;
        std::uint32_t reg = 0;
        std::uint64_t value = 0;
    };
    struct CInstr {
        const ir::Instr *src = nullptr;
        std::vector<COperand> ops;
        std::int32_t dst = -1;
        std::size_t target_pc = 0;
        std::size_t target2_pc = 0;
        std::size_t callee = 0;
        std::uint64_t size = 0; // bytes: alloca, copy, new_obj, field offset, element size
        std::vector<ir::ProtectedSlot> slots;
        std::vector<std::optional<std::uint16_t>> slot_sigs;
    };
    struct CFunction {
        const ir::Function *src = nullptr;
        std::uint64_t address = 0;
        std::vector<CInstr> code;
        std::unordered_map<std::string, std::uint32_t> reg_index;
        std::size_t reg_count = 0;
    };
    struct Frame {
        std::size_t fn = 0;
        std::size_t pc = 0;
        std::uint64_t fp = 0;
        std::vector<std::uint64_t> regs;
    };
    struct ReservedRegisters {
        Prng prng;
        MacKey key;
        crypto::Aes128 cipher;
        std::uint64_t leaf_ret = 0;
        std::uint64_t leaf_fp = 0;
    };
    struct Stop {
        RunResult::Outcome outcome;
        std::int64_t exit_code = 0;
        std::optional<Trap> trap;
    };

    static ReservedRegisters make_reserved(std::uint64_t seed);
    void load();
    void compile();
    std::uint64_t layout_global(const ir::Type &t, const ir::Initializer &init,
                                std::uint64_t addr);
    std::uint64_t value(const Frame &f, const COperand &op) const noexcept;
    void set(Frame &f, std::int32_t reg, std::uint64_t v) noexcept;

    void enter(std::size_t fn, const std::vector<std::uint64_t> &args, std::uint64_t ret_addr);
    void call_address(std::uint64_t target, const std::vector<std::uint64_t> &args,
                      std::uint64_t ret_addr);
    std::optional<Stop> do_return(std::uint64_t value);
    std::optional<std::pair<std::size_t, std::size_t>> decode(std::uint64_t addr) const;
    std::uint64_t return_address(std::size_t fn, std::size_t pc) const noexcept;
    void push(std::uint64_t v);
    void check_stack(std::uint64_t sp) const;
    void charge_mac();

    ClassTag class_for(PointerKind kind, std::uint64_t addr,
                       std::optional<std::uint16_t> sig) const;
    void macptr(std::uint64_t ptr, const ClassTag &cls);
    std::uint64_t checkptr(std::uint64_t ptr, const ClassTag &cls);
    bool frame_intact(const std::array<std::uint8_t, 16> &stored) const;

    std::optional<Stop> step();
    std::optional<Stop> exec(Frame &f, const CInstr &ci);
    void fire(std::string_view label, const AttackScript &script);
    void run_action(const std::string &trigger, const AttackAction &a);
    std::uint64_t eval(const AddrExpr &e) const;
    Trap make_trap(TrapKind kind, std::string message) const;

    const ir::Module &module_;
    RunConfig config_;
    Memory memory_;
    MacTable table_;
    RandAllocator heap_;
    ReservedRegisters reserved_;

    std::vector<CFunction> funcs_;
    std::unordered_map<std::string, std::size_t> func_index_;
    std::unordered_map<std::string, std::uint64_t> symbols_; // globals and tables
    std::size_t main_ = 0;
    std::optional<std::size_t> init_;
    bool in_init_ = false;

    std::vector<Frame> frames_;
    std::uint64_t sp_ = layout::kStackTop;
    RunResult result_;

    const AttackScript *script_ = nullptr;
    const RunHooks *hooks_ = nullptr;
    std::map<std::string, unsigned, std::less<>> occurrences_;
    std::map<std::string, std::vector<std::uint8_t>, std::less<>> bindings_;
};

/// Thrown by attacker_write for a target overlapping a read-only region.
class AttackRejected : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Convenience: construct a Machine and run it.
RunResult run(const ir::Module &module, const AttackScript &script, const RunConfig &config,
              const RunHooks &hooks = {});

} // namespace ccfi::vm
