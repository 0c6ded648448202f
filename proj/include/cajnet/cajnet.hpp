#pragma once

#include "cajnet/alignment.hpp"
#include "cajnet/discrepancy.hpp"
#include "cajnet/domain_data.hpp"
#include "cajnet/encoder.hpp"
#include "cajnet/error.hpp"
#include "cajnet/feature_io.hpp"
#include "cajnet/matrix.hpp"
#include "cajnet/pipeline.hpp"
#include "cajnet/report.hpp"
#include "cajnet/synthetic.hpp"
#include "cajnet/topk.hpp"
