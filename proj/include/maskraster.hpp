// Copyright Contributors to the maskraster project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "maskraster/adam.hpp"
#include "maskraster/backward.hpp"
#include "maskraster/bench.hpp"
#include "maskraster/binning.hpp"
#include "maskraster/densify.hpp"
#include "maskraster/gaussian.hpp"
#include "maskraster/image.hpp"
#include "maskraster/mask.hpp"
#include "maskraster/oracle.hpp"
#include "maskraster/parallel.hpp"
#include "maskraster/projection.hpp"
#include "maskraster/render.hpp"
#include "maskraster/scene.hpp"
#include "maskraster/sh.hpp"
#include "maskraster/trainer.hpp"

#include "maskraster/io/atomic_file.hpp"
#include "maskraster/io/config.hpp"
#include "maskraster/io/manifest.hpp"
#include "maskraster/io/ply.hpp"
#include "maskraster/io/png.hpp"
#include "maskraster/io/report.hpp"
