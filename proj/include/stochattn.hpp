#pragma once

#include "stochattn/attention.hpp"
#include "stochattn/checkpoint.hpp"
#include "stochattn/data.hpp"
#include "stochattn/errors.hpp"
#include "stochattn/gradcheck.hpp"
#include "stochattn/metrics.hpp"
#include "stochattn/model.hpp"
#include "stochattn/ops.hpp"
#include "stochattn/report.hpp"
#include "stochattn/rng.hpp"
#include "stochattn/run_config.hpp"
#include "stochattn/sampling.hpp"
#include "stochattn/tensor.hpp"
#include "stochattn/train.hpp"
#include "stochattn/uncertainty.hpp"
#include "stochattn/verify.hpp"
