#pragma once

#include "evalkit/errors.hpp"
#include "evalkit/text.hpp"
#include "evalkit/corpus.hpp"
#include "evalkit/overlap_metrics.hpp"
#include "evalkit/stats.hpp"
#include "evalkit/providers.hpp"
#include "evalkit/model_metrics.hpp"
#include "evalkit/suffix_array.hpp"
#include "evalkit/bloom.hpp"
#include "evalkit/parallel.hpp"
#include "evalkit/dataset_quality.hpp"
#include "evalkit/metric_suite.hpp"
#include "evalkit/robustness.hpp"
#include "evalkit/http_provider.hpp"
#include "evalkit/harness.hpp"
#include "evalkit/report.hpp"
