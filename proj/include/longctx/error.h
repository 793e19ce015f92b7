// Copyright 2026 The longctx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace longctx {

// Base of every error raised by the engine. Each subclass corresponds to one
// failure class so callers can catch precisely.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define LONGCTX_DEFINE_ERROR(Name)          \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

LONGCTX_DEFINE_ERROR(DimensionError);
LONGCTX_DEFINE_ERROR(ConfigError);
LONGCTX_DEFINE_ERROR(DegenerateRowError);
LONGCTX_DEFINE_ERROR(IndexError);
LONGCTX_DEFINE_ERROR(RangeError);
LONGCTX_DEFINE_ERROR(EmptySelectionError);
LONGCTX_DEFINE_ERROR(EmptyWindowError);
LONGCTX_DEFINE_ERROR(EmptyMixtureError);
LONGCTX_DEFINE_ERROR(OversizeSampleError);
LONGCTX_DEFINE_ERROR(UnderfullError);
LONGCTX_DEFINE_ERROR(LayoutError);
LONGCTX_DEFINE_ERROR(FormatError);
LONGCTX_DEFINE_ERROR(InvariantError);

#undef LONGCTX_DEFINE_ERROR

// Raised when a ring participant stops responding or a transport fails.
class RingBrokenError : public Error {
 public:
  RingBrokenError(std::size_t dead_rank, const std::string& what)
      : Error("ring broken at rank " + std::to_string(dead_rank) + ": " + what),
        dead_rank_(dead_rank) {}

  std::size_t dead_rank() const noexcept { return dead_rank_; }

 private:
  std::size_t dead_rank_;
};

}  // namespace longctx
