#pragma once

#include "revit/common.hpp"
#include "revit/tensor.hpp"
#include "revit/ops.hpp"
#include "revit/attention.hpp"
#include "revit/model.hpp"
#include "revit/analysis.hpp"
#include "revit/data.hpp"
#include "revit/optimizer.hpp"
#include "revit/checkpoint.hpp"
#include "revit/training.hpp"
#include "revit/config.hpp"
