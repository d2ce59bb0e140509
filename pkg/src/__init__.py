# Fading multiple-access channel game solver
