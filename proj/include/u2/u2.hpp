// Copyright 2026 The U2 Desk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include "u2/aed.hpp"
#include "u2/checkpoint.hpp"
#include "u2/ctc.hpp"
#include "u2/encoder.hpp"
#include "u2/masking.hpp"
#include "u2/model.hpp"
#include "u2/nn.hpp"
#include "u2/numerics/grad_check.hpp"
#include "u2/numerics/graph.hpp"
#include "u2/numerics/random.hpp"
#include "u2/numerics/tensor.hpp"
#include "u2/runtime.hpp"
#include "u2/synthetic.hpp"
#include "u2/trainer.hpp"
