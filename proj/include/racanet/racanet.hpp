#pragma once

// Umbrella header.
#include "racanet/data/augment.hpp"
#include "racanet/data/dataset.hpp"
#include "racanet/harness.hpp"
#include "racanet/model.hpp"
#include "racanet/train/loops.hpp"
