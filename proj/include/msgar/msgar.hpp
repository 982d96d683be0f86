// Copyright (C) 2026 The msgar authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "msgar/backbone.hpp"
#include "msgar/core.hpp"
#include "msgar/data_model.hpp"
#include "msgar/datasets.hpp"
#include "msgar/fusion.hpp"
#include "msgar/image.hpp"
#include "msgar/metrics.hpp"
#include "msgar/modality.hpp"
#include "msgar/nn.hpp"
#include "msgar/report.hpp"
#include "msgar/stream.hpp"
#include "msgar/train.hpp"
