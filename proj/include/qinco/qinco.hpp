// Copyright 2026 the qinco-cpp authors
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

#include "qinco/clustering.hpp"
#include "qinco/codec.hpp"
#include "qinco/datasets.hpp"
#include "qinco/linalg.hpp"
#include "qinco/metrics.hpp"
#include "qinco/parallel.hpp"
#include "qinco/pq_qinco.hpp"
#include "qinco/qinco_model.hpp"
#include "qinco/rng.hpp"
#include "qinco/search.hpp"
#include "qinco/storage.hpp"
#include "qinco/training.hpp"
