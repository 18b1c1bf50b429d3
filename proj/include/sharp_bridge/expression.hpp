#pragma once

// Scalar expressions in one variable `z`, used by the "scalar-sigma" model.
//
// Grammar:
//   expr   := term ('+' term)*
//   term   := factor ('*' factor)*
//   factor := number | 'z' | 'exp' '(' expr ')' | '(' expr ')' | '-' factor

#include "sharp_bridge/errors.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <string>
#include <string_view>

namespace sharp_bridge {

class Expression {
public:
    Expression() = default;

    static Expression parse(std::string_view text) {
        Parser p{text, 0};
        auto root = p.expr();
        p.skip_ws();
        if (p.pos != text.size()) p.fail("unexpected trailing input");
        Expression e;
        e.root_ = std::move(root);
        e.text_ = std::string(text);
        return e;
    }

    double operator()(double z) const {
        if (!root_) throw ConfigError("empty expression");
        return root_->eval(z);
    }

    const std::string& text() const { return text_; }
    bool empty() const { return !root_; }

private:
    struct Node {
        enum class Kind { kConst, kVar, kAdd, kMul, kExp, kNeg } kind;
        double value = 0.0;
        std::shared_ptr<const Node> lhs, rhs;

        double eval(double z) const {
            switch (kind) {
                case Kind::kConst: return value;
                case Kind::kVar: return z;
                case Kind::kAdd: return lhs->eval(z) + rhs->eval(z);
                case Kind::kMul: return lhs->eval(z) * rhs->eval(z);
                case Kind::kExp: return std::exp(lhs->eval(z));
                case Kind::kNeg: return -lhs->eval(z);
            }
            return 0.0;
        }
    };
    using NodePtr = std::shared_ptr<const Node>;

    struct Parser {
        std::string_view src;
        std::size_t pos;

        [[noreturn]] void fail(const std::string& msg) const {
            throw ConfigError("expression '" + std::string(src) + "' at column " +
                              std::to_string(pos + 1) + ": " + msg);
        }
        void skip_ws() {
            while (pos < src.size() && std::isspace(static_cast<unsigned char>(src[pos]))) ++pos;
        }
        bool eat(char c) {
            skip_ws();
            if (pos < src.size() && src[pos] == c) { ++pos; return true; }
            return false;
        }
        static NodePtr make(Node::Kind k, NodePtr a = nullptr, NodePtr b = nullptr, double v = 0.0) {
            return std::make_shared<const Node>(Node{k, v, std::move(a), std::move(b)});
        }
        NodePtr expr() {
            NodePtr lhs = term();
            while (eat('+')) lhs = make(Node::Kind::kAdd, lhs, term());
            return lhs;
        }
        NodePtr term() {
            NodePtr lhs = factor();
            while (eat('*')) lhs = make(Node::Kind::kMul, lhs, factor());
            return lhs;
        }
        NodePtr factor() {
            skip_ws();
            if (pos >= src.size()) fail("unexpected end of input");
            if (eat('-')) return make(Node::Kind::kNeg, factor());
            if (eat('(')) {
                NodePtr inner = expr();
                if (!eat(')')) fail("expected ')'");
                return inner;
            }
            if (src.substr(pos, 3) == "exp") {
                pos += 3;
                if (!eat('(')) fail("expected '(' after exp");
                NodePtr inner = expr();
                if (!eat(')')) fail("expected ')'");
                return make(Node::Kind::kExp, inner);
            }
            if (src[pos] == 'z') {
                ++pos;
                return make(Node::Kind::kVar);
            }
            if (std::isdigit(static_cast<unsigned char>(src[pos])) || src[pos] == '.') {
                const std::string tail(src.substr(pos));
                char* end = nullptr;
                const double v = std::strtod(tail.c_str(), &end);
                if (end == tail.c_str()) fail("bad number");
                pos += static_cast<std::size_t>(end - tail.c_str());
                return make(Node::Kind::kConst, nullptr, nullptr, v);
            }
            fail(std::string("unexpected character '") + src[pos] + "'");
        }
    };

    NodePtr root_;
    std::string text_;
};

}  // namespace sharp_bridge
