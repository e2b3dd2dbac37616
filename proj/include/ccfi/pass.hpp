#pragma once

#include <string>
#include <vector>

#include "ccfi/ir.hpp"

namespace ccfi::pass {

struct PassConfig {
    bool protect_stack = true;
    bool protect_pointers = true;
    bool leaf_opt = true;
    bool type_sig_classes = false;
    unsigned entropy_bits = 0;

    static constexpr unsigned kMaxEntropyBits = 16;

    static PassConfig full() { return {}; }
    static PassConfig off() { return {false, false, false, false, 0}; }
    bool any() const noexcept { return protect_stack || protect_pointers || entropy_bits > 0; }
};

/// Register holding the frame's MAC slot address between prologue and
/// epilogue.
inline constexpr std::string_view kFrameSlotReg = "__ccfi.frame";

/// Rewrites a typechecked module so that control-flow pointers are MACed on
/// store and checked on load, frames are protected, leaf functions use the
/// reserved leaf register, globals are MACed before `main`, and typed record
/// copies re-MAC their pointers. The input is not modified. An all-off
/// configuration returns the module unchanged. Throws std::invalid_argument
/// for entropy above 16 bits.
ir::Module instrument_module(const ir::Module &m, const PassConfig &config);

/// Prologue: optional random pad, then MAC the saved return address with the
/// saved frame pointer as class into a fresh stack slot. Epilogue: recheck
/// before every `ret`.
ir::Function instrument_frame(const ir::Function &fn, const PassConfig &config);

/// Leaf variant: copy the saved return address and frame pointer into the
/// reserved leaf register and compare before every `ret`. No MACs. Throws
/// std::invalid_argument for a non-leaf function.
ir::Function leaf_optimize(const ir::Function &fn, const PassConfig &config);

/// macptr after every function-pointer store and object construction;
/// checkptr plus guard after every function-pointer load; method calls check
/// the table pointer before indexing it.
ir::Function instrument_pointer_ops(const ir::Module &m, const ir::Function &fn,
                                    const PassConfig &config);

/// Expands typed record copies into check-at-source, copy, MAC-at-destination
/// for every control pointer inside the record. `rawcopy` is left alone.
ir::Function instrument_copies(const ir::Module &m, const ir::Function &fn,
                               const PassConfig &config);

/// Appends `__ccfi_init`, which MACs every function pointer and method-table
/// pointer found in global initializers (recursively through records).
/// Nothing is appended when no global holds a control pointer.
ir::Module emit_global_initializers(const ir::Module &m, const PassConfig &config);

/// Static scan of an instrumented module: every icall/vcall operand must come
/// from a checkptr or from a value that never left the register file, and no
/// unexpanded mcall may remain. Returns one message per violation.
std::vector<std::string> verify_mediation(const ir::Module &m);

} // namespace ccfi::pass
