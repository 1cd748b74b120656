#ifndef SGG_SGG_HPP
#define SGG_SGG_HPP

#include "sgg/box_coder.hpp"
#include "sgg/checkpoint.hpp"
#include "sgg/data_io.hpp"
#include "sgg/diagnostics.hpp"
#include "sgg/error.hpp"
#include "sgg/evaluation.hpp"
#include "sgg/graph.hpp"
#include "sgg/model.hpp"
#include "sgg/rng.hpp"
#include "sgg/synth.hpp"
#include "sgg/tensor.hpp"
#include "sgg/training.hpp"

#endif // header guard
