#ifndef PANO_PT36_HPP
#define PANO_PT36_HPP

#include <string>

#include "pano/tensor.hpp"

namespace pano {

// PT36 tensor container: magic "PT36", version u16, rank u16, one u32 extent
// per dimension, then the f32 payload in row-major order. All fields little
// endian. One tensor per file.
void write_pt36(const std::string& path, const TensorF& t);
TensorF read_pt36(const std::string& path);

}  // namespace pano

#endif
