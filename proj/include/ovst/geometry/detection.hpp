// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "ovst/geometry/box.hpp"

namespace ovst {

template <typename Box>
struct Detection {
  std::int64_t image_id = 0;
  Box box{};
  int category = 0;
  double score = 0.0;
};

}  // namespace ovst
