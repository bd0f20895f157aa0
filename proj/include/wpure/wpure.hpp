//
// Copyright 2026 The wpure Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef WPURE_WPURE_HPP
#define WPURE_WPURE_HPP

#include "wpure/binio.hpp"
#include "wpure/config.hpp"
#include "wpure/critic.hpp"
#include "wpure/dataset.hpp"
#include "wpure/detectors.hpp"
#include "wpure/error.hpp"
#include "wpure/experiment.hpp"
#include "wpure/feature_extractor.hpp"
#include "wpure/manipulation.hpp"
#include "wpure/ot.hpp"
#include "wpure/probe.hpp"
#include "wpure/purifier.hpp"
#include "wpure/rng.hpp"
#include "wpure/special.hpp"
#include "wpure/synthetic.hpp"

#endif // WPURE_WPURE_HPP
