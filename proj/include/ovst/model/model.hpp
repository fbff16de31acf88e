// Copyright 2026 The ovst Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ovst/model/box_coder.hpp"
#include "ovst/model/checkpoint.hpp"
#include "ovst/model/consistency.hpp"
#include "ovst/model/losses.hpp"
#include "ovst/model/optim.hpp"
#include "ovst/model/student.hpp"
