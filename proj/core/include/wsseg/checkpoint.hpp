#pragma once

#include "wsseg/net.hpp"
#include "wsseg/trainer.hpp"

#include <filesystem>
#include <iosfwd>

namespace wsseg {

struct Checkpoint {
    TcnConfig net;
    TrainState state;
};

// Line-oriented text; doubles use the shortest round-trip form so save -> load is exact.
void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in, const std::string& origin = "<checkpoint>");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

} // namespace wsseg
