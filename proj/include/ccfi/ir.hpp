#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ccfi/mac.hpp"

namespace ccfi::ir {

enum class TypeKind : std::uint8_t { Int64, RawPtr, FnPtr, Record };

/// Every scalar is one 64-bit cell. Function pointer types carry their
/// signature structurally; `str()` is the canonical spelling used for
/// type-signature hashing.
struct Type {
    TypeKind kind = TypeKind::Int64;
    std::string record;
    std::vector<Type> params;
    std::vector<Type> result; // empty or exactly one element

    static Type i64() { return {}; }
    static Type ptr() { return {TypeKind::RawPtr, {}, {}, {}}; }
    static Type fn(std::vector<Type> params, std::optional<Type> ret = std::nullopt);
    static Type rec(std::string name) { return {TypeKind::Record, std::move(name), {}, {}}; }

    bool is_int() const noexcept { return kind == TypeKind::Int64; }
    bool is_ptr() const noexcept { return kind == TypeKind::RawPtr; }
    bool is_fnptr() const noexcept { return kind == TypeKind::FnPtr; }
    bool is_record() const noexcept { return kind == TypeKind::Record; }
    bool is_scalar() const noexcept { return kind != TypeKind::Record; }

    std::string str() const;
    friend bool operator==(const Type &, const Type &) = default;
};

struct Operand {
    enum class Kind : std::uint8_t { Reg, Imm, Func, Global };
    Kind kind = Kind::Imm;
    std::string name;
    std::int64_t imm = 0;

    static Operand reg(std::string n) { return {Kind::Reg, std::move(n), 0}; }
    static Operand lit(std::int64_t v) { return {Kind::Imm, {}, v}; }
    static Operand func(std::string n) { return {Kind::Func, std::move(n), 0}; }
    static Operand global(std::string n) { return {Kind::Global, std::move(n), 0}; }

    bool is_reg() const noexcept { return kind == Kind::Reg; }
    std::string str() const;
    friend bool operator==(const Operand &, const Operand &) = default;
};

enum class Op : std::uint8_t {
    Label,
    Mov,
    Add, Sub, Mul, Div, Rem, And, Or, Xor, Shl, Shr,
    Eq, Ne, Lt, Le, Gt, Ge,
    Cast,
    Offset,
    Field,
    Load,
    Store,
    Alloca,
    HeapAlloc,
    HeapFree,
    Copy,
    RawCopy,
    CcfiRawCopy,
    Call,
    ICall,
    MCall,
    LoadVt,
    VCall,
    NewObj,
    Ret,
    Br,
    Jmp,
    MacPtr,
    CheckPtr,
    Guard,
    AttackPoint,
    Print,
    Halt,
    // Emitted by the instrumentation pass.
    FramePad,
    FrameMac,
    FrameCheck,
    LeafSave,
    LeafCheck,
};

std::string_view mnemonic(Op op) noexcept;
std::optional<Op> op_from_mnemonic(std::string_view text) noexcept;
bool is_binary(Op op) noexcept;
bool is_compare(Op op) noexcept;
/// call, icall, mcall and vcall.
bool is_call(Op op) noexcept;

/// One IR instruction. Which fields are meaningful depends on `op`:
///   type     load/store/alloca/cast/copy element type, ccfi_rawcopy element
///   target   callee, branch label, attack label, record name (field,
///            new_obj), label name
///   target2  else-label of br, method table of new_obj
///   index    field index, method index, alloca count, pad entropy bits
///   kind/sig class of macptr/checkptr/ccfi_guard
struct Instr {
    Op op = Op::Mov;
    std::string dst;
    Type type;
    std::vector<Operand> operands;
    std::string target;
    std::string target2;
    std::int64_t index = 0;
    PointerKind kind = PointerKind::FunctionPointer;
    std::optional<std::uint16_t> sig;
    int line = 0;

    /// Structural equality ignores source lines.
    friend bool operator==(const Instr &a, const Instr &b) {
        return a.op == b.op && a.dst == b.dst && a.type == b.type && a.operands == b.operands &&
               a.target == b.target && a.target2 == b.target2 && a.index == b.index &&
               a.kind == b.kind && a.sig == b.sig;
    }
};

struct Param {
    std::string name;
    Type type;
    friend bool operator==(const Param &, const Param &) = default;
};

struct Function {
    std::string name;
    std::vector<Param> params;
    std::optional<Type> ret;
    std::vector<Instr> body;

    Type type() const;
    std::string signature() const { return type().str(); }
    /// No call, icall, mcall or vcall in the body. `print` is a VM service.
    bool is_leaf() const noexcept;
    friend bool operator==(const Function &, const Function &) = default;
};

struct RecordDef {
    std::string name;
    bool has_method_table = false;
    std::vector<Type> fields;
    friend bool operator==(const RecordDef &, const RecordDef &) = default;
};

struct MethodTable {
    std::string name;
    std::vector<std::string> entries;
    friend bool operator==(const MethodTable &, const MethodTable &) = default;
};

struct Initializer {
    enum class Kind : std::uint8_t { None, Int, Func, Table, Aggregate };
    Kind kind = Kind::None;
    std::int64_t value = 0;
    std::string name;
    std::vector<Initializer> elems;
    friend bool operator==(const Initializer &, const Initializer &) = default;
};

struct Global {
    std::string name;
    Type type;
    Initializer init;
    bool readonly = false;
    friend bool operator==(const Global &, const Global &) = default;
};

/// Protection applied to a module, recorded by the instrumentation pass and
/// consulted by the VM (ccfi_rawcopy re-MACs only in protected modules).
struct ModuleAttributes {
    bool instrumented = false;
    bool stack = false;
    bool fptr = false;
    bool leaf = false;
    bool typesig = false;
    unsigned entropy = 0;
    friend bool operator==(const ModuleAttributes &, const ModuleAttributes &) = default;
};

struct Module {
    ModuleAttributes attrs;
    std::vector<RecordDef> records;
    std::vector<MethodTable> tables;
    std::vector<Global> globals;
    std::vector<Function> functions;

    const Function *find_function(std::string_view name) const noexcept;
    Function *find_function(std::string_view name) noexcept;
    const RecordDef *find_record(std::string_view name) const noexcept;
    const MethodTable *find_table(std::string_view name) const noexcept;
    const Global *find_global(std::string_view name) const noexcept;

    friend bool operator==(const Module &, const Module &) = default;
};

inline constexpr std::string_view kInitFunction = "__ccfi_init";

/// Layout: every scalar is 8 bytes; a record with a method table has a
/// hidden table pointer at offset 0 followed by its fields in order.
std::uint64_t size_of(const Module &m, const Type &t);
std::uint64_t field_offset(const Module &m, const RecordDef &r, std::size_t index);

/// A control-flow pointer at a fixed offset inside a value of some type.
struct ProtectedSlot {
    std::uint64_t offset = 0;
    PointerKind kind = PointerKind::FunctionPointer;
    Type type; // FnPtr type, or RawPtr for method-table pointers
};

/// All function pointers and method-table pointers reachable inside `t`,
/// walking nested records.
std::vector<ProtectedSlot> protected_slots(const Module &m, const Type &t);
bool contains_control_pointer(const Module &m, const Type &t);

class ParseError : public std::runtime_error {
public:
    ParseError(int line, int column, const std::string &message);
    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

/// Parses the textual form documented in docs/ir.md. Throws ParseError with
/// a line/column on syntax errors, duplicate names, unknown types, and a
/// missing `main`.
Module parse_module(std::string_view text);
std::string print_module(const Module &m);
std::string print_instr(const Instr &instr);

} // namespace ccfi::ir
