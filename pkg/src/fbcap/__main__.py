from fbcap.cli import main

main()
