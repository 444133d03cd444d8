#pragma once

#include <string>

#include "nsk/runtime.hpp"

namespace nsk::detail {

// Tensor operand for a traced op: the expression's own node, or a fresh leaf.
ad::Var as_var(const Result& r, const std::string& what);

Result apply_binary(ast::BinaryOp op, const Result& a, const Result& b);
bool truthy(const Value& v);

// Stores a value under `key`, entering its backward tree on the tape and
// naming provisional parameters after their first storage key.
void bind_value(Frame& f, Bindings& store, const std::string& key, Result r);

}  // namespace nsk::detail
