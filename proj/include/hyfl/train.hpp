/*
 * Copyright 2026 The HyFL Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "hyfl/errors.hpp"

namespace hyfl {

/// Hyperparameters shared by all trainable models. `epochs` doubles as the
/// boosting round count for tree ensembles.
struct TrainSpec {
  std::size_t epochs = 50;
  double learning_rate = 0.01;
  std::size_t batch_size = 256;
  std::uint64_t seed = 1;
  std::optional<std::vector<double>> sample_weights;

  void validate() const {
    if (learning_rate <= 0.0) throw ValidationError("learning_rate must be > 0");
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (sample_weights) {
      for (double w : *sample_weights)
        if (!(w >= 0.0)) throw ValidationError("sample weights must be >= 0");
    }
  }
};

/// Optimizer continuation state, used when training is split across
/// aggregation rounds. Epoch indices keep their global numbering so a
/// round-split run replays the exact same batch schedule as an unsplit one.
struct ResumeState {
  std::size_t next_epoch = 0;
  double learning_rate = 0.0;   // 0 means "use spec.learning_rate"
  double last_loss = 0.0;
  bool has_last_loss = false;
};

}  // namespace hyfl
