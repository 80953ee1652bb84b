// SPDX-License-Identifier: Apache-2.0

#pragma once

namespace deformtrack {
namespace mc {

extern const int kEdgeTable[256];
extern const int kTriTable[256][16];

}  // namespace mc
}  // namespace deformtrack
