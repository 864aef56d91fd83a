namespace rapidmix {}
