#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bhnd {

struct RecognizerRecord {
  std::int64_t step = 0;
  std::string split;  // "train" or "validation"
  double loss = 0.0;
  double accuracy = 0.0;
};

struct SganRecord {
  std::int64_t step = 0;
  double d_loss = 0.0;
  double d_accuracy = 0.0;
  double g_loss = 0.0;
};

using RecognizerMetrics = std::vector<RecognizerRecord>;
using SganMetrics = std::vector<SganRecord>;

}  // namespace bhnd
