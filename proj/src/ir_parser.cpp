#include <cctype>
#include <map>
#include <set>

#include "ccfi/ir.hpp"

namespace ccfi::ir {

ParseError::ParseError(int line, int column, const std::string &message)
    : std::runtime_error(std::to_string(line) + ":" + std::to_string(column) + ": " + message),
      line_(line), column_(column) {}

namespace {

enum class Tok : std::uint8_t { Ident, Reg, Func, Global, Int, Punct, Newline, End };

struct Token {
    Tok kind = Tok::End;
    std::string text;
    std::int64_t value = 0;
    int line = 0;
    int col = 0;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.';
}

std::vector<Token> lex(std::string_view src) {
    std::vector<Token> out;
    int line = 1, col = 1;
    std::size_t i = 0;
    auto advance = [&](std::size_t n = 1) {
        for (std::size_t k = 0; k < n; ++k) {
            if (src[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
            ++i;
        }
    };
    while (i < src.size()) {
        const char c = src[i];
        if (c == '#') {
            while (i < src.size() && src[i] != '\n')
                advance();
            continue;
        }
        if (c == '\n' || c == ';') {
            out.push_back({Tok::Newline, std::string(1, c), 0, line, col});
            advance();
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            advance();
            continue;
        }
        Token t;
        t.line = line;
        t.col = col;
        if (c == '%' || c == '@' || c == '&') {
            advance();
            if (i >= src.size() || !(ident_start(src[i]) || src[i] == '.'))
                throw ParseError(t.line, t.col, std::string("expected a name after '") + c + "'");
            std::size_t start = i;
            while (i < src.size() && ident_char(src[i]))
                advance();
            t.kind = c == '%' ? Tok::Reg : c == '@' ? Tok::Func : Tok::Global;
            t.text = std::string(src.substr(start, i - start));
        } else if (ident_start(c)) {
            std::size_t start = i;
            while (i < src.size() && ident_char(src[i]))
                advance();
            t.kind = Tok::Ident;
            t.text = std::string(src.substr(start, i - start));
        } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                   (c == '-' && i + 1 < src.size() &&
                    std::isdigit(static_cast<unsigned char>(src[i + 1])))) {
            std::size_t start = i;
            advance();
            while (i < src.size() && std::isalnum(static_cast<unsigned char>(src[i])))
                advance();
            t.kind = Tok::Int;
            t.text = std::string(src.substr(start, i - start));
            try {
                std::size_t used = 0;
                const bool neg = t.text[0] == '-';
                const std::string digits = neg ? t.text.substr(1) : t.text;
                const unsigned long long v = std::stoull(digits, &used, 0);
                if (used != digits.size())
                    throw std::invalid_argument("junk");
                t.value = neg ? -static_cast<std::int64_t>(v) : static_cast<std::int64_t>(v);
            } catch (const std::exception &) {
                throw ParseError(t.line, t.col, "malformed integer '" + t.text + "'");
            }
        } else if (c == '-' && i + 1 < src.size() && src[i + 1] == '>') {
            t.kind = Tok::Punct;
            t.text = "->";
            advance(2);
        } else if (std::string_view("(){}[],:=").find(c) != std::string_view::npos) {
            t.kind = Tok::Punct;
            t.text = std::string(1, c);
            advance();
        } else {
            throw ParseError(line, col, std::string("unexpected character '") + c + "'");
        }
        out.push_back(std::move(t));
    }
    out.push_back({Tok::End, "", 0, line, col});
    return out;
}

class Parser {
public:
    explicit Parser(std::vector<Token> toks) : toks_(std::move(toks)) {}

    Module parse() {
        skip_newlines();
        while (!at(Tok::End)) {
            const Token &t = expect(Tok::Ident, "a top-level item");
            if (t.text == "ccfi")
                parse_attributes();
            else if (t.text == "record")
                parse_record(t);
            else if (t.text == "methods")
                parse_table(t);
            else if (t.text == "global" || t.text == "const")
                parse_global(t, t.text == "const");
            else if (t.text == "fn")
                parse_function(t);
            else
                throw ParseError(t.line, t.col, "unknown top-level item '" + t.text + "'");
            skip_newlines();
        }
        validate();
        return std::move(module_);
    }

private:
    // -- token helpers ------------------------------------------------------

    const Token &peek(std::size_t ahead = 0) const {
        return toks_[std::min(pos_ + ahead, toks_.size() - 1)];
    }
    bool at(Tok k) const { return peek().kind == k; }
    bool at_punct(std::string_view p) const { return at(Tok::Punct) && peek().text == p; }
    bool at_ident(std::string_view w) const { return at(Tok::Ident) && peek().text == w; }
    const Token &next() {
        const Token &t = toks_[pos_];
        if (pos_ + 1 < toks_.size())
            ++pos_;
        return t;
    }
    [[noreturn]] void fail(const std::string &msg) const {
        throw ParseError(peek().line, peek().col, msg);
    }
    std::string describe(const Token &t) const {
        switch (t.kind) {
        case Tok::End: return "end of input";
        case Tok::Newline: return "end of statement";
        default: return "'" + t.text + "'";
        }
    }
    const Token &expect(Tok k, const std::string &what) {
        if (!at(k))
            fail("expected " + what + ", found " + describe(peek()));
        return next();
    }
    void expect_punct(std::string_view p) {
        if (!at_punct(p))
            fail("expected '" + std::string(p) + "', found " + describe(peek()));
        next();
    }
    bool accept_punct(std::string_view p) {
        if (at_punct(p)) {
            next();
            return true;
        }
        return false;
    }
    void skip_newlines() {
        while (at(Tok::Newline))
            next();
    }
    void end_statement() {
        if (at(Tok::Newline)) {
            skip_newlines();
            return;
        }
        if (at_punct("}") || at(Tok::End))
            return;
        fail("expected end of statement, found " + describe(peek()));
    }

    // -- items ---------------------------------------------------------------

    void remember(std::map<std::string, int> &names, const std::string &kind, const Token &at_tok,
                  const std::string &name) {
        if (!names.emplace(name, at_tok.line).second)
            throw ParseError(at_tok.line, at_tok.col, "duplicate " + kind + " '" + name + "'");
    }

    void parse_attributes() {
        auto &a = module_.attrs;
        a.instrumented = true;
        while (at(Tok::Ident)) {
            const Token &w = next();
            if (w.text == "stack")
                a.stack = true;
            else if (w.text == "fptr")
                a.fptr = true;
            else if (w.text == "leaf")
                a.leaf = true;
            else if (w.text == "typesig")
                a.typesig = true;
            else if (w.text == "entropy")
                a.entropy = static_cast<unsigned>(expect(Tok::Int, "entropy bits").value);
            else
                throw ParseError(w.line, w.col, "unknown ccfi attribute '" + w.text + "'");
        }
        end_statement();
    }

    void parse_record(const Token &kw) {
        RecordDef r;
        const Token &name = expect(Tok::Ident, "record name");
        r.name = name.text;
        remember(type_names_, "record", name, r.name);
        if (at_ident("methods")) {
            next();
            r.has_method_table = true;
        }
        expect_punct("{");
        skip_newlines();
        if (!at_punct("}")) {
            do {
                skip_newlines();
                r.fields.push_back(parse_type());
                skip_newlines();
            } while (accept_punct(","));
        }
        expect_punct("}");
        record_lines_[r.name] = kw.line;
        module_.records.push_back(std::move(r));
        end_statement();
    }

    void parse_table(const Token &) {
        MethodTable t;
        const Token &name = expect(Tok::Ident, "method table name");
        t.name = name.text;
        remember(data_names_, "global or method table", name, t.name);
        expect_punct("=");
        expect_punct("[");
        skip_newlines();
        if (!at_punct("]")) {
            do {
                skip_newlines();
                const Token &f = expect(Tok::Func, "@function");
                t.entries.push_back(f.text);
                func_refs_.push_back(f);
                skip_newlines();
            } while (accept_punct(","));
        }
        expect_punct("]");
        module_.tables.push_back(std::move(t));
        end_statement();
    }

    Initializer parse_init() {
        Initializer init;
        if (at(Tok::Int)) {
            init.kind = Initializer::Kind::Int;
            init.value = next().value;
        } else if (at(Tok::Func)) {
            init.kind = Initializer::Kind::Func;
            func_refs_.push_back(peek());
            init.name = next().text;
        } else if (at(Tok::Ident)) {
            init.kind = Initializer::Kind::Table;
            table_refs_.push_back(peek());
            init.name = next().text;
        } else if (accept_punct("{")) {
            init.kind = Initializer::Kind::Aggregate;
            skip_newlines();
            if (!at_punct("}")) {
                do {
                    skip_newlines();
                    init.elems.push_back(parse_init());
                    skip_newlines();
                } while (accept_punct(","));
            }
            expect_punct("}");
        } else {
            fail("expected an initializer, found " + describe(peek()));
        }
        return init;
    }

    void parse_global(const Token &, bool readonly) {
        Global g;
        g.readonly = readonly;
        const Token &name = expect(Tok::Ident, "global name");
        g.name = name.text;
        remember(data_names_, "global or method table", name, g.name);
        expect_punct(":");
        g.type = parse_type();
        if (accept_punct("="))
            g.init = parse_init();
        module_.globals.push_back(std::move(g));
        end_statement();
    }

    Type parse_type() {
        const Token &t = expect(Tok::Ident, "a type");
        if (t.text == "i64")
            return Type::i64();
        if (t.text == "ptr")
            return Type::ptr();
        if (t.text == "fn") {
            expect_punct("(");
            std::vector<Type> params;
            if (!at_punct(")")) {
                do {
                    params.push_back(parse_type());
                } while (accept_punct(","));
            }
            expect_punct(")");
            std::optional<Type> ret;
            if (accept_punct("->"))
                ret = parse_type();
            for (const auto &p : params)
                if (!p.is_scalar())
                    throw ParseError(t.line, t.col, "function parameters must be scalar");
            if (ret && !ret->is_scalar())
                throw ParseError(t.line, t.col, "function results must be scalar");
            return Type::fn(std::move(params), std::move(ret));
        }
        type_refs_.push_back(t);
        return Type::rec(t.text);
    }

    void parse_function(const Token &) {
        Function f;
        const Token &name = expect(Tok::Ident, "function name");
        f.name = name.text;
        remember(function_names_, "function", name, f.name);
        expect_punct("(");
        if (!at_punct(")")) {
            do {
                const Token &p = expect(Tok::Reg, "%parameter");
                expect_punct(":");
                Type ty = parse_type();
                if (!ty.is_scalar())
                    throw ParseError(p.line, p.col, "parameter %" + p.text + " must be scalar");
                f.params.push_back({p.text, std::move(ty)});
            } while (accept_punct(","));
        }
        expect_punct(")");
        if (accept_punct("->")) {
            const Token &rt = peek();
            f.ret = parse_type();
            if (!f.ret->is_scalar())
                throw ParseError(rt.line, rt.col, "return type must be scalar");
        }
        expect_punct("{");
        skip_newlines();
        std::set<std::string> labels;
        std::vector<Token> label_uses;
        while (!at_punct("}")) {
            if (at(Tok::End))
                fail("unterminated function body for '" + f.name + "'");
            if (at(Tok::Ident) && peek(1).kind == Tok::Punct && peek(1).text == ":") {
                const Token &l = next();
                next();
                if (!labels.insert(l.text).second)
                    throw ParseError(l.line, l.col, "duplicate label '" + l.text + "'");
                Instr in;
                in.op = Op::Label;
                in.target = l.text;
                in.line = l.line;
                f.body.push_back(std::move(in));
                skip_newlines();
                continue;
            }
            f.body.push_back(parse_instr(label_uses));
            end_statement();
        }
        expect_punct("}");
        for (const auto &use : label_uses)
            if (!labels.count(use.text))
                throw ParseError(use.line, use.col, "unknown label '" + use.text + "'");
        module_.functions.push_back(std::move(f));
        end_statement();
    }

    // -- instructions --------------------------------------------------------

    Operand parse_operand() {
        const Token &t = peek();
        switch (t.kind) {
        case Tok::Reg: next(); return Operand::reg(t.text);
        case Tok::Int: next(); return Operand::lit(t.value);
        case Tok::Func:
            func_refs_.push_back(t);
            next();
            return Operand::func(t.text);
        case Tok::Global:
            data_refs_.push_back(t);
            next();
            return Operand::global(t.text);
        default: fail("expected an operand, found " + describe(t));
        }
    }

    void parse_args(std::vector<Operand> &ops) {
        expect_punct("(");
        if (!at_punct(")")) {
            do {
                ops.push_back(parse_operand());
            } while (accept_punct(","));
        }
        expect_punct(")");
    }

    PointerKind parse_kind() {
        const Token &t = expect(Tok::Ident, "a pointer kind (return, fptr, vtable, data)");
        if (t.text == "return")
            return PointerKind::ReturnAddress;
        if (t.text == "fptr")
            return PointerKind::FunctionPointer;
        if (t.text == "vtable")
            return PointerKind::VTablePointer;
        if (t.text == "data")
            return PointerKind::ManualData;
        throw ParseError(t.line, t.col, "unknown pointer kind '" + t.text + "'");
    }

    std::int64_t parse_int(const std::string &what) { return expect(Tok::Int, what).value; }

    Instr parse_instr(std::vector<Token> &label_uses) {
        Instr in;
        in.line = peek().line;
        if (at(Tok::Reg) && peek(1).kind == Tok::Punct && peek(1).text == "=") {
            in.dst = next().text;
            next();
        }
        const Token &m = expect(Tok::Ident, "an instruction");
        const auto op = op_from_mnemonic(m.text);
        if (!op)
            throw ParseError(m.line, m.col, "unknown instruction '" + m.text + "'");
        in.op = *op;
        auto &ops = in.operands;
        auto needs_dst = [&](bool required) {
            if (required && in.dst.empty())
                throw ParseError(m.line, m.col, "'" + m.text + "' must define a register");
            if (!required && !in.dst.empty())
                throw ParseError(m.line, m.col, "'" + m.text + "' does not produce a value");
        };
        auto label = [&]() -> std::string {
            const Token &l = expect(Tok::Ident, "a label");
            label_uses.push_back(l);
            return l.text;
        };

        if (is_binary(in.op)) {
            needs_dst(true);
            ops.push_back(parse_operand());
            expect_punct(",");
            ops.push_back(parse_operand());
            return in;
        }
        switch (in.op) {
        case Op::Mov:
        case Op::HeapAlloc:
        case Op::LoadVt:
            needs_dst(true);
            ops.push_back(parse_operand());
            break;
        case Op::HeapFree:
        case Op::Print:
        case Op::FrameCheck:
            needs_dst(false);
            ops.push_back(parse_operand());
            break;
        case Op::Cast:
            needs_dst(true);
            in.type = parse_type();
            ops.push_back(parse_operand());
            break;
        case Op::Offset:
            needs_dst(true);
            ops.push_back(parse_operand());
            expect_punct(",");
            ops.push_back(parse_operand());
            break;
        case Op::Field:
            needs_dst(true);
            ops.push_back(parse_operand());
            expect_punct(",");
            in.target = expect(Tok::Ident, "a record name").text;
            type_refs_.push_back(toks_[pos_ - 1]);
            expect_punct(",");
            in.index = parse_int("a field index");
            break;
        case Op::Load:
            needs_dst(true);
            in.type = parse_type();
            expect_punct(",");
            ops.push_back(parse_operand());
            break;
        case Op::Store:
            needs_dst(false);
            in.type = parse_type();
            ops.push_back(parse_operand());
            expect_punct(",");
            ops.push_back(parse_operand());
            break;
        case Op::Alloca:
            needs_dst(true);
            in.type = parse_type();
            in.index = 1;
            if (accept_punct(","))
                in.index = parse_int("an element count");
            if (in.index < 1)
                throw ParseError(m.line, m.col, "alloca count must be positive");
            break;
        case Op::Copy:
            needs_dst(false);
            in.type = parse_type();
            ops.push_back(parse_operand());
            expect_punct(",");
            ops.push_back(parse_operand());
            break;
        case Op::RawCopy:
        case Op::CcfiRawCopy:
            needs_dst(false);
            ops.push_back(parse_operand());
            expect_punct(",");
            ops.push_back(parse_operand());
            expect_punct(",");
            ops.push_back(parse_operand());
            if (in.op == Op::CcfiRawCopy) {
                expect_punct(",");
                in.type = parse_type();
            }
            break;
        case Op::Call: {
            const Token &f = expect(Tok::Func, "@callee");
            func_refs_.push_back(f);
            in.target = f.text;
            parse_args(ops);
            break;
        }
        case Op::ICall:
            ops.push_back(parse_operand());
            parse_args(ops);
            break;
        case Op::MCall:
        case Op::VCall:
            ops.push_back(parse_operand());
            expect_punct(",");
            in.index = parse_int("a method index");
            parse_args(ops);
            break;
        case Op::NewObj:
            needs_dst(true);
            in.target = expect(Tok::Ident, "a record name").text;
            type_refs_.push_back(toks_[pos_ - 1]);
            expect_punct(",");
            in.target2 = expect(Tok::Ident, "a method table name").text;
            table_refs_.push_back(toks_[pos_ - 1]);
            break;
        case Op::Ret:
        case Op::Halt:
            needs_dst(false);
            if (!at(Tok::Newline) && !at_punct("}") && !at(Tok::End))
                ops.push_back(parse_operand());
            break;
        case Op::Br:
            needs_dst(false);
            ops.push_back(parse_operand());
            expect_punct(",");
            in.target = label();
            expect_punct(",");
            in.target2 = label();
            break;
        case Op::Jmp:
            needs_dst(false);
            in.target = label();
            break;
        case Op::MacPtr:
        case Op::CheckPtr:
            needs_dst(in.op == Op::CheckPtr);
            ops.push_back(parse_operand());
            expect_punct(",");
            in.kind = parse_kind();
            expect_punct(",");
            ops.push_back(parse_operand());
            if (accept_punct(",")) {
                const Token &w = expect(Tok::Ident, "'sig'");
                if (w.text != "sig")
                    throw ParseError(w.line, w.col, "expected 'sig'");
                in.sig = static_cast<std::uint16_t>(parse_int("a signature hash") & kSigHashMask);
            }
            break;
        case Op::Guard:
            needs_dst(false);
            ops.push_back(parse_operand());
            expect_punct(",");
            ops.push_back(parse_operand());
            expect_punct(",");
            in.kind = parse_kind();
            break;
        case Op::AttackPoint:
            needs_dst(false);
            in.target = expect(Tok::Ident, "an attack point label").text;
            break;
        case Op::FramePad:
            needs_dst(false);
            in.index = parse_int("entropy bits");
            break;
        case Op::FrameMac:
            needs_dst(true);
            break;
        case Op::LeafSave:
        case Op::LeafCheck:
            needs_dst(false);
            break;
        default:
            throw ParseError(m.line, m.col, "unsupported instruction '" + m.text + "'");
        }
        return in;
    }

    // -- module-level validation -------------------------------------------

    void validate() {
        for (const auto &t : type_refs_)
            if (!type_names_.count(t.text))
                throw ParseError(t.line, t.col, "unknown type '" + t.text + "'");
        for (const auto &t : func_refs_)
            if (!function_names_.count(t.text))
                throw ParseError(t.line, t.col, "unknown function '@" + t.text + "'");
        for (const auto &t : data_refs_)
            if (!data_names_.count(t.text))
                throw ParseError(t.line, t.col, "unknown global '&" + t.text + "'");
        for (const auto &t : table_refs_)
            if (!module_.find_table(t.text))
                throw ParseError(t.line, t.col, "unknown method table '" + t.text + "'");
        for (const auto &r : module_.records)
            check_record_cycles(r.name, {});
        if (!module_.find_function("main"))
            throw ParseError(peek().line, peek().col, "module has no function named 'main'");
    }

    void check_record_cycles(const std::string &name, std::set<std::string> seen) {
        if (!seen.insert(name).second)
            throw ParseError(record_lines_[name], 1, "record '" + name + "' contains itself");
        const RecordDef *r = module_.find_record(name);
        for (const auto &f : r->fields)
            if (f.is_record())
                check_record_cycles(f.record, seen);
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
    Module module_;
    std::map<std::string, int> function_names_, type_names_, data_names_, record_lines_;
    std::vector<Token> type_refs_, func_refs_, data_refs_, table_refs_;
};

} // namespace

Module parse_module(std::string_view text) { return Parser(lex(text)).parse(); }

} // namespace ccfi::ir
