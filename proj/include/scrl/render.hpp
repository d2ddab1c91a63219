#pragma once

#include <string>
#include <vector>

#include "scrl/mdp.hpp"

namespace scrl {

// Arrow map of a next-state maze policy. Walls are '#', the goal '*', mapped
// dataset cells one of '^v<>', everything else '.'. Rows print top to bottom.
std::string render_maze_ascii(const MazeMdp& maze, const std::vector<int>& policy);

// Same map as an SVG document.
std::string render_maze_svg(const MazeMdp& maze, const std::vector<int>& policy);

}  // namespace scrl
