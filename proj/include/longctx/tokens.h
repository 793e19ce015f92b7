// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

namespace longctx {

using TokenId = std::int32_t;
using TokenList = std::vector<TokenId>;

// Reserved ids of every toy vocabulary; content ids start at kFirstContentToken.
inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kEosToken = 1;
inline constexpr TokenId kBosToken = 2;
inline constexpr TokenId kFirstContentToken = 3;

}  // namespace longctx
