#include <algorithm>
#include <limits>
#include <stdexcept>

#include "imarl/netemu.hpp"

namespace imarl::netemu {

std::vector<double> allocate_airlink(double capacity, std::span<const AirlinkDemand> ues) {
    std::vector<double> alloc(ues.size(), 0.0);
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < ues.size(); ++i) {
        if (ues[i].demand < 0.0 || !(ues[i].weight > 0.0)) {
            throw std::invalid_argument("allocate_airlink: demands must be >= 0 and weights > 0");
        }
        if (ues[i].demand > 0.0) active.push_back(i);
    }
    double remaining = std::max(0.0, capacity);

    // Each round raises the common fill level until either the capacity runs out or
    // the next UE hits its demand; saturated UEs are frozen at exactly their demand.
    while (remaining > 0.0 && !active.empty()) {
        double weight_sum = 0.0;
        double level = std::numeric_limits<double>::infinity();
        for (std::size_t i : active) {
            weight_sum += ues[i].weight;
            level = std::min(level, (ues[i].demand - alloc[i]) / ues[i].weight);
        }
        if (level * weight_sum >= remaining) {
            const double fill = remaining / weight_sum;
            for (std::size_t i : active) alloc[i] = std::min(ues[i].demand, alloc[i] + fill * ues[i].weight);
            break;
        }
        std::vector<std::size_t> still_active;
        for (std::size_t i : active) {
            const double next = alloc[i] + level * ues[i].weight;
            if ((ues[i].demand - alloc[i]) / ues[i].weight <= level) {
                remaining -= ues[i].demand - alloc[i];
                alloc[i] = ues[i].demand;
            } else {
                remaining -= next - alloc[i];
                alloc[i] = next;
                still_active.push_back(i);
            }
        }
        active.swap(still_active);
    }
    return alloc;
}

}  // namespace imarl::netemu
