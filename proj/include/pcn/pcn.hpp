#pragma once

#include "pcn/annotate.hpp"
#include "pcn/cascade.hpp"
#include "pcn/corpus_io.hpp"
#include "pcn/error.hpp"
#include "pcn/eval.hpp"
#include "pcn/geometry.hpp"
#include "pcn/image.hpp"
#include "pcn/layers.hpp"
#include "pcn/losses.hpp"
#include "pcn/model_io.hpp"
#include "pcn/network.hpp"
#include "pcn/pipeline.hpp"
#include "pcn/synthetic.hpp"
#include "pcn/tensor.hpp"
#include "pcn/trainer.hpp"
