#include "ccfi/ir.hpp"

#include <array>
#include <cstdio>
#include <sstream>

namespace ccfi::ir {

Type Type::fn(std::vector<Type> params, std::optional<Type> ret) {
    Type t;
    t.kind = TypeKind::FnPtr;
    t.params = std::move(params);
    if (ret)
        t.result.push_back(std::move(*ret));
    return t;
}

std::string Type::str() const {
    switch (kind) {
    case TypeKind::Int64: return "i64";
    case TypeKind::RawPtr: return "ptr";
    case TypeKind::Record: return record;
    case TypeKind::FnPtr: {
        std::string s = "fn(";
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (i)
                s += ",";
            s += params[i].str();
        }
        s += ")";
        if (!result.empty())
            s += "->" + result.front().str();
        return s;
    }
    }
    return "?";
}

std::string Operand::str() const {
    switch (kind) {
    case Kind::Reg: return "%" + name;
    case Kind::Imm: return std::to_string(imm);
    case Kind::Func: return "@" + name;
    case Kind::Global: return "&" + name;
    }
    return "?";
}

namespace {

struct OpName {
    Op op;
    std::string_view name;
};

constexpr std::array kOpNames{
    OpName{Op::Label, "label"},
    OpName{Op::Mov, "mov"},
    OpName{Op::Add, "add"},
    OpName{Op::Sub, "sub"},
    OpName{Op::Mul, "mul"},
    OpName{Op::Div, "div"},
    OpName{Op::Rem, "rem"},
    OpName{Op::And, "and"},
    OpName{Op::Or, "or"},
    OpName{Op::Xor, "xor"},
    OpName{Op::Shl, "shl"},
    OpName{Op::Shr, "shr"},
    OpName{Op::Eq, "eq"},
    OpName{Op::Ne, "ne"},
    OpName{Op::Lt, "lt"},
    OpName{Op::Le, "le"},
    OpName{Op::Gt, "gt"},
    OpName{Op::Ge, "ge"},
    OpName{Op::Cast, "cast"},
    OpName{Op::Offset, "offset"},
    OpName{Op::Field, "field"},
    OpName{Op::Load, "load"},
    OpName{Op::Store, "store"},
    OpName{Op::Alloca, "alloca"},
    OpName{Op::HeapAlloc, "heap_alloc"},
    OpName{Op::HeapFree, "heap_free"},
    OpName{Op::Copy, "copy"},
    OpName{Op::RawCopy, "rawcopy"},
    OpName{Op::CcfiRawCopy, "ccfi_rawcopy"},
    OpName{Op::Call, "call"},
    OpName{Op::ICall, "icall"},
    OpName{Op::MCall, "mcall"},
    OpName{Op::LoadVt, "loadvt"},
    OpName{Op::VCall, "vcall"},
    OpName{Op::NewObj, "new_obj"},
    OpName{Op::Ret, "ret"},
    OpName{Op::Br, "br"},
    OpName{Op::Jmp, "jmp"},
    OpName{Op::MacPtr, "macptr"},
    OpName{Op::CheckPtr, "checkptr"},
    OpName{Op::Guard, "ccfi_guard"},
    OpName{Op::AttackPoint, "attack_point"},
    OpName{Op::Print, "print"},
    OpName{Op::Halt, "halt"},
    OpName{Op::FramePad, "ccfi_pad"},
    OpName{Op::FrameMac, "ccfi_frame_mac"},
    OpName{Op::FrameCheck, "ccfi_frame_check"},
    OpName{Op::LeafSave, "ccfi_leaf_save"},
    OpName{Op::LeafCheck, "ccfi_leaf_check"},
};

} // namespace

std::string_view mnemonic(Op op) noexcept {
    for (const auto &entry : kOpNames)
        if (entry.op == op)
            return entry.name;
    return "?";
}

std::optional<Op> op_from_mnemonic(std::string_view text) noexcept {
    for (const auto &entry : kOpNames)
        if (entry.name == text && entry.op != Op::Label)
            return entry.op;
    return std::nullopt;
}

bool is_binary(Op op) noexcept { return op >= Op::Add && op <= Op::Ge; }
bool is_compare(Op op) noexcept { return op >= Op::Eq && op <= Op::Ge; }
bool is_call(Op op) noexcept {
    return op == Op::Call || op == Op::ICall || op == Op::MCall || op == Op::VCall;
}

Type Function::type() const {
    std::vector<Type> ps;
    ps.reserve(params.size());
    for (const auto &p : params)
        ps.push_back(p.type);
    return Type::fn(std::move(ps), ret);
}

bool Function::is_leaf() const noexcept {
    for (const auto &instr : body)
        if (is_call(instr.op))
            return false;
    return true;
}

const Function *Module::find_function(std::string_view name) const noexcept {
    for (const auto &f : functions)
        if (f.name == name)
            return &f;
    return nullptr;
}

Function *Module::find_function(std::string_view name) noexcept {
    for (auto &f : functions)
        if (f.name == name)
            return &f;
    return nullptr;
}

const RecordDef *Module::find_record(std::string_view name) const noexcept {
    for (const auto &r : records)
        if (r.name == name)
            return &r;
    return nullptr;
}

const MethodTable *Module::find_table(std::string_view name) const noexcept {
    for (const auto &t : tables)
        if (t.name == name)
            return &t;
    return nullptr;
}

const Global *Module::find_global(std::string_view name) const noexcept {
    for (const auto &g : globals)
        if (g.name == name)
            return &g;
    return nullptr;
}

std::uint64_t size_of(const Module &m, const Type &t) {
    if (t.is_scalar())
        return 8;
    const RecordDef *r = m.find_record(t.record);
    if (!r)
        throw std::invalid_argument("unknown record type " + t.record);
    std::uint64_t size = r->has_method_table ? 8 : 0;
    for (const auto &f : r->fields)
        size += size_of(m, f);
    return size;
}

std::uint64_t field_offset(const Module &m, const RecordDef &r, std::size_t index) {
    if (index >= r.fields.size())
        throw std::out_of_range("field index out of range for record " + r.name);
    std::uint64_t offset = r.has_method_table ? 8 : 0;
    for (std::size_t i = 0; i < index; ++i)
        offset += size_of(m, r.fields[i]);
    return offset;
}

namespace {
void collect_slots(const Module &m, const Type &t, std::uint64_t base,
                   std::vector<ProtectedSlot> &out) {
    if (t.is_fnptr()) {
        out.push_back({base, PointerKind::FunctionPointer, t});
        return;
    }
    if (!t.is_record())
        return;
    const RecordDef *r = m.find_record(t.record);
    if (!r)
        throw std::invalid_argument("unknown record type " + t.record);
    if (r->has_method_table)
        out.push_back({base, PointerKind::VTablePointer, Type::ptr()});
    for (std::size_t i = 0; i < r->fields.size(); ++i)
        collect_slots(m, r->fields[i], base + field_offset(m, *r, i), out);
}
} // namespace

std::vector<ProtectedSlot> protected_slots(const Module &m, const Type &t) {
    std::vector<ProtectedSlot> out;
    collect_slots(m, t, 0, out);
    return out;
}

bool contains_control_pointer(const Module &m, const Type &t) {
    return !protected_slots(m, t).empty();
}

// ---------------------------------------------------------------------------
// Printer

namespace {

std::string join_operands(const std::vector<Operand> &ops, std::size_t from) {
    std::string s;
    for (std::size_t i = from; i < ops.size(); ++i) {
        if (i > from)
            s += ", ";
        s += ops[i].str();
    }
    return s;
}

std::string class_suffix(const Instr &in) {
    std::string s = ", " + std::string(to_string(in.kind)) + ", " + in.operands.at(1).str();
    if (in.sig) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "0x%04x", *in.sig);
        s += ", sig ";
        s += buf;
    }
    return s;
}

std::string print_init(const Initializer &init) {
    switch (init.kind) {
    case Initializer::Kind::None: return "";
    case Initializer::Kind::Int: return std::to_string(init.value);
    case Initializer::Kind::Func: return "@" + init.name;
    case Initializer::Kind::Table: return init.name;
    case Initializer::Kind::Aggregate: {
        std::string s = "{ ";
        for (std::size_t i = 0; i < init.elems.size(); ++i) {
            if (i)
                s += ", ";
            s += print_init(init.elems[i]);
        }
        return s + " }";
    }
    }
    return "";
}

} // namespace

std::string print_instr(const Instr &in) {
    const std::string dst = in.dst.empty() ? "" : "%" + in.dst + " = ";
    const std::string name(mnemonic(in.op));
    const auto &ops = in.operands;
    if (is_binary(in.op))
        return dst + name + " " + ops.at(0).str() + ", " + ops.at(1).str();
    switch (in.op) {
    case Op::Label: return in.target + ":";
    case Op::Mov:
    case Op::HeapAlloc:
    case Op::LoadVt: return dst + name + " " + ops.at(0).str();
    case Op::HeapFree:
    case Op::Print:
    case Op::FrameCheck: return name + " " + ops.at(0).str();
    case Op::Cast: return dst + name + " " + in.type.str() + " " + ops.at(0).str();
    case Op::Offset: return dst + name + " " + ops.at(0).str() + ", " + ops.at(1).str();
    case Op::Field:
        return dst + name + " " + ops.at(0).str() + ", " + in.target + ", " + std::to_string(in.index);
    case Op::Load: return dst + name + " " + in.type.str() + ", " + ops.at(0).str();
    case Op::Store:
        return name + " " + in.type.str() + " " + ops.at(0).str() + ", " + ops.at(1).str();
    case Op::Alloca:
        return dst + name + " " + in.type.str() +
               (in.index != 1 ? ", " + std::to_string(in.index) : std::string());
    case Op::Copy: return name + " " + in.type.str() + " " + join_operands(ops, 0);
    case Op::RawCopy: return name + " " + join_operands(ops, 0);
    case Op::CcfiRawCopy: return name + " " + join_operands(ops, 0) + ", " + in.type.str();
    case Op::Call: return dst + name + " @" + in.target + "(" + join_operands(ops, 0) + ")";
    case Op::ICall: return dst + name + " " + ops.at(0).str() + "(" + join_operands(ops, 1) + ")";
    case Op::MCall:
    case Op::VCall:
        return dst + name + " " + ops.at(0).str() + ", " + std::to_string(in.index) + "(" +
               join_operands(ops, 1) + ")";
    case Op::NewObj: return dst + name + " " + in.target + ", " + in.target2;
    case Op::Ret:
    case Op::Halt: return ops.empty() ? name : name + " " + ops.at(0).str();
    case Op::Br: return name + " " + ops.at(0).str() + ", " + in.target + ", " + in.target2;
    case Op::Jmp: return name + " " + in.target;
    case Op::MacPtr: return name + " " + ops.at(0).str() + class_suffix(in);
    case Op::CheckPtr: return dst + name + " " + ops.at(0).str() + class_suffix(in);
    case Op::Guard:
        return name + " " + ops.at(0).str() + ", " + ops.at(1).str() + ", " +
               std::string(to_string(in.kind));
    case Op::AttackPoint: return name + " " + in.target;
    case Op::FramePad: return name + " " + std::to_string(in.index);
    case Op::FrameMac: return dst + name;
    case Op::LeafSave:
    case Op::LeafCheck: return name;
    default: break;
    }
    return "?";
}

std::string print_module(const Module &m) {
    std::ostringstream out;
    if (m.attrs.instrumented) {
        out << "ccfi";
        if (m.attrs.stack)
            out << " stack";
        if (m.attrs.fptr)
            out << " fptr";
        if (m.attrs.leaf)
            out << " leaf";
        if (m.attrs.typesig)
            out << " typesig";
        out << " entropy " << m.attrs.entropy << "\n\n";
    }
    for (const auto &r : m.records) {
        out << "record " << r.name << (r.has_method_table ? " methods" : "") << " { ";
        for (std::size_t i = 0; i < r.fields.size(); ++i)
            out << (i ? ", " : "") << r.fields[i].str();
        out << " }\n";
    }
    for (const auto &t : m.tables) {
        out << "methods " << t.name << " = [";
        for (std::size_t i = 0; i < t.entries.size(); ++i)
            out << (i ? ", " : "") << "@" << t.entries[i];
        out << "]\n";
    }
    for (const auto &g : m.globals) {
        out << (g.readonly ? "const " : "global ") << g.name << ": " << g.type.str();
        if (g.init.kind != Initializer::Kind::None)
            out << " = " << print_init(g.init);
        out << "\n";
    }
    for (const auto &f : m.functions) {
        out << "\nfn " << f.name << "(";
        for (std::size_t i = 0; i < f.params.size(); ++i)
            out << (i ? ", " : "") << "%" << f.params[i].name << ": " << f.params[i].type.str();
        out << ")";
        if (f.ret)
            out << " -> " << f.ret->str();
        out << " {\n";
        for (const auto &in : f.body) {
            if (in.op == Op::Label)
                out << print_instr(in) << "\n";
            else
                out << "  " << print_instr(in) << "\n";
        }
        out << "}\n";
    }
    return out.str();
}

} // namespace ccfi::ir
