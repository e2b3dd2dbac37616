#include "ccfi/attack.hpp"

#include <cctype>

namespace ccfi::vm {

namespace {

class LineParser {
public:
    LineParser(std::string_view s, int line) : s_(s), line_(line) {}

    void skip_ws() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_])))
            ++pos_;
    }
    bool done() {
        skip_ws();
        return pos_ >= s_.size();
    }
    char peek() {
        skip_ws();
        return pos_ < s_.size() ? s_[pos_] : '\0';
    }
    bool accept(char c) {
        if (peek() == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (!accept(c))
            fail(std::string("expected '") + c + "'");
    }
    [[noreturn]] void fail(const std::string &msg) const {
        throw AttackParseError(line_, msg + " near column " + std::to_string(pos_ + 1));
    }
    std::string word() {
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) ||
                                    s_[pos_] == '_' || s_[pos_] == '.'))
            ++pos_;
        if (start == pos_)
            fail("expected a name");
        return std::string(s_.substr(start, pos_ - start));
    }
    std::uint64_t number() {
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < s_.size() && std::isalnum(static_cast<unsigned char>(s_[pos_])))
            ++pos_;
        const std::string digits(s_.substr(start, pos_ - start));
        try {
            std::size_t used = 0;
            const auto v = std::stoull(digits, &used, 0);
            if (used == digits.size())
                return v;
        } catch (const std::exception &) {
        }
        fail("malformed number '" + digits + "'");
    }
    std::string rest() {
        skip_ws();
        std::string r(s_.substr(pos_));
        pos_ = s_.size();
        return r;
    }
    bool starts_with(std::string_view w) {
        skip_ws();
        return s_.substr(pos_, w.size()) == w;
    }
    void advance(std::size_t n) { pos_ += n; }

    AddrExpr addr() {
        AddrExpr e;
        bool negate = false;
        if (accept('-'))
            negate = true;
        while (true) {
            AddrExpr::Term t = term();
            t.negate = negate;
            e.terms.push_back(std::move(t));
            if (accept('+'))
                negate = false;
            else if (accept('-'))
                negate = true;
            else
                break;
        }
        return e;
    }

    AddrExpr::Term term() {
        using K = AddrExpr::Term::Kind;
        AddrExpr::Term t;
        const char c = peek();
        if (c == '&' || c == '@' || c == '%' || c == '$') {
            ++pos_;
            t.kind = c == '&' ? K::Global : c == '@' ? K::Func : c == '%' ? K::Reg : K::Var;
            t.name = word();
            return t;
        }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            t.kind = K::Int;
            t.value = static_cast<std::int64_t>(number());
            return t;
        }
        if (starts_with("frame")) {
            advance(5);
            expect('[');
            bool neg = accept('-');
            if (!neg)
                accept('+');
            const auto n = static_cast<std::int64_t>(number());
            expect(']');
            t.kind = K::Frame;
            t.value = neg ? -n : n;
            return t;
        }
        if (starts_with("macslot")) {
            advance(7);
            expect('(');
            t.kind = K::MacSlot;
            t.inner.push_back(addr());
            expect(')');
            return t;
        }
        fail("expected an address term");
    }

    ValueExpr value() {
        ValueExpr v;
        if (starts_with("hex:")) {
            advance(4);
            const std::string hex = word();
            if (hex.size() % 2 != 0)
                fail("hex byte string needs an even number of digits");
            for (std::size_t i = 0; i < hex.size(); i += 2) {
                const std::string byte = hex.substr(i, 2);
                if (!std::isxdigit(static_cast<unsigned char>(byte[0])) ||
                    !std::isxdigit(static_cast<unsigned char>(byte[1])))
                    fail("bad hex digit in '" + hex + "'");
                v.bytes.push_back(static_cast<std::uint8_t>(std::stoul(byte, nullptr, 16)));
            }
            v.kind = ValueExpr::Kind::Bytes;
            return v;
        }
        if (starts_with("u64(")) {
            advance(4);
            v.kind = ValueExpr::Kind::Word;
            v.word = addr();
            expect(')');
            return v;
        }
        if (std::isdigit(static_cast<unsigned char>(peek()))) {
            v.kind = ValueExpr::Kind::Word;
            AddrExpr::Term t;
            t.value = static_cast<std::int64_t>(number());
            v.word.terms.push_back(t);
            return v;
        }
        v.kind = ValueExpr::Kind::Var;
        v.name = word();
        if (accept('[')) {
            if (peek() != ':')
                v.slice_begin = number();
            expect(':');
            if (peek() != ']')
                v.slice_end = number();
            expect(']');
        }
        return v;
    }

private:
    std::string_view s_;
    std::size_t pos_ = 0;
    int line_;
};

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
        s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
        s.remove_suffix(1);
    return s;
}

} // namespace

AttackScript parse_attack_script(std::string_view text) {
    AttackScript script;
    int line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string_view::npos)
            end = text.size();
        std::string_view line = text.substr(start, end - start);
        start = end + 1;
        ++line_no;

        line = trim(line);
        if (line.empty() || line.front() == '#')
            continue;
        if (line.substr(0, 3) != "on ")
            throw AttackParseError(line_no, "expected 'on <label>[#k]: <action>'");
        const std::size_t colon = line.find(':');
        if (colon == std::string_view::npos)
            throw AttackParseError(line_no, "missing ':' after trigger");
        std::string_view trig = trim(line.substr(3, colon - 3));
        std::string label(trig);
        unsigned occurrence = 0;
        if (auto hash = trig.find('#'); hash != std::string_view::npos) {
            label = std::string(trim(trig.substr(0, hash)));
            const std::string k(trim(trig.substr(hash + 1)));
            try {
                std::size_t used = 0;
                occurrence = static_cast<unsigned>(std::stoul(k, &used, 10));
                if (used != k.size() || occurrence == 0)
                    throw std::invalid_argument(k);
            } catch (const std::exception &) {
                throw AttackParseError(line_no, "occurrence must be a positive integer");
            }
        }
        if (label.empty())
            throw AttackParseError(line_no, "empty trigger label");

        // Strip trailing comments from the action.
        std::string_view body = line.substr(colon + 1);
        if (auto hash = body.find(" #"); hash != std::string_view::npos)
            body = body.substr(0, hash);
        body = trim(body);

        AttackAction action;
        action.text = std::string(body);
        LineParser p(body, line_no);
        const std::string verb = p.word();
        if (verb == "read") {
            action.kind = AttackAction::Kind::Read;
            action.addr = p.addr();
            action.length = p.number();
            if (p.word() != "as")
                p.fail("expected 'as'");
            action.name = p.word();
        } else if (verb == "write") {
            action.kind = AttackAction::Kind::Write;
            action.addr = p.addr();
            action.value = p.value();
        } else if (verb == "let") {
            action.kind = AttackAction::Kind::Let;
            action.name = p.word();
            p.expect('=');
            action.addr = p.addr();
        } else if (verb == "note") {
            action.kind = AttackAction::Kind::Note;
            action.name = p.rest();
        } else {
            p.fail("unknown action '" + verb + "'");
        }
        if (!p.done())
            p.fail("trailing input");

        if (script.triggers.empty() || script.triggers.back().label != label ||
            script.triggers.back().occurrence != occurrence)
            script.triggers.push_back({label, occurrence, {}});
        script.triggers.back().actions.push_back(std::move(action));
    }
    return script;
}

} // namespace ccfi::vm
